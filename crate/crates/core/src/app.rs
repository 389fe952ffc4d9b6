//! Wiring of all components from a [`ServiceConfig`].
//!
//! Data directory layout:
//!
//! ```text
//! <data_dir>/events.log          binary event log
//! <data_dir>/images/             content-addressed scene images
//! <data_dir>/audit.jsonl         distillation audit trail
//! <data_dir>/update_state.json   export cursor, model version, pending job
//! <data_dir>/exports/            training batches
//! ```

use std::sync::Arc;

use crate::config::{ProviderKind, ServiceConfig, TrainerKind};
use crate::dialogue::templates::Templates;
use crate::dialogue::Orchestrator;
use crate::distill::{AuditLog, Distiller};
use crate::error::Result;
use crate::gateway::{
    ChatProvider, EmbeddingProvider, Gateway, HashEmbedder, HttpChat, HttpEmbedder, ScriptedChat,
};
use crate::images::ImageStore;
use crate::store::{EventStore, StoreOptions};
use crate::update::{HttpTrainer, MockTrainer, Trainer, UpdateManager};

/// Reply rules used by the mock chat provider when no rules file is configured.
pub const DEFAULT_MOCK_RULES: &str = include_str!("../examples/mock_rules.yaml");

pub struct App {
    pub config: ServiceConfig,
    pub gateway: Arc<Gateway>,
    pub store: Arc<EventStore>,
    pub images: Arc<ImageStore>,
    pub orchestrator: Arc<Orchestrator>,
    pub update: Arc<UpdateManager>,
}

impl App {
    pub fn build(config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        let data = config.storage.data_dir.clone();
        let images = Arc::new(ImageStore::open(data.join("images"))?);
        let store = Arc::new(EventStore::open_with(
            &data,
            StoreOptions { min_bbox_area: config.dialogue.min_bbox_area, sync: config.storage.sync },
        )?);

        let embedder: Arc<dyn EmbeddingProvider> = match config.embedding.kind {
            ProviderKind::Mock => Arc::new(match &config.embedding.tag {
                Some(tag) => HashEmbedder::with_tag(config.embedding.dim, tag.clone()),
                None => HashEmbedder::new(config.embedding.dim),
            }),
            ProviderKind::Http => Arc::new(HttpEmbedder::new(
                config.embedding.endpoint.clone(),
                config.embedding.dim,
                config.embedding.tag.clone().unwrap_or_else(|| "http".into()),
                config.embedding_timeout(),
            )),
        };
        let chat: Arc<dyn ChatProvider> = match config.chat.kind {
            ProviderKind::Mock => Arc::new(match &config.chat.rules_file {
                Some(path) => ScriptedChat::from_file(path)?,
                None => ScriptedChat::from_yaml(DEFAULT_MOCK_RULES)?,
            }),
            ProviderKind::Http => {
                Arc::new(HttpChat::new(config.chat.endpoint.clone(), config.chat_timeout(), images.clone()))
            }
        };
        let gateway = Arc::new(Gateway::new(embedder, chat, images.clone(), config.chat.model.clone()));

        let templates = Arc::new(match &config.dialogue.templates_dir {
            Some(dir) => Templates::load_dir(dir)?,
            None => Templates::default(),
        });
        let audit = Arc::new(AuditLog::open(&data.join("audit.jsonl"))?);
        let distiller = Distiller::new(
            gateway.clone(),
            store.clone(),
            templates.clone(),
            Some(audit),
            config.dialogue.min_bbox_area,
        );
        let orchestrator = Arc::new(Orchestrator::new(
            gateway.clone(),
            store.clone(),
            templates,
            distiller,
            config.dialogue_config(),
        ));

        let mut update = UpdateManager::open(&data, store.clone(), images.clone(), config.update.threshold, &config.chat.model)?
            .with_gateway(gateway.clone());
        let trainer: Option<Arc<dyn Trainer>> = match config.update.trainer {
            TrainerKind::None => None,
            TrainerKind::Mock => Some(Arc::new(MockTrainer::succeeding("mock-finetuned"))),
            TrainerKind::Http => {
                Some(Arc::new(HttpTrainer::new(config.update.trainer_endpoint.clone(), config.trainer_timeout())))
            }
        };
        if let Some(t) = trainer {
            update = update.with_trainer(t);
        }

        Ok(Self { config, gateway, store, images, orchestrator, update: Arc::new(update) })
    }
}
