//! Append-only binary record log.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! file   := MAGIC record*
//! MAGIC  := "ILRNEVT1"                      8 bytes
//! record := body_len:u32 crc32(body):u32 body
//! body   := version:u8 (=1)
//!           flags:u8                        bit 0 = localization flagged
//!           reserved:u16 (=0)
//!           event_id:u64
//!           created_at:i64                  nanoseconds since the Unix epoch, UTC
//!           bbox:f64 x4                     x0 y0 x1 y1
//!           dim:u32
//!           e_img:f32 x dim
//!           e_text:f32 x dim
//!           image_ref, session_id, provider_tag, question, answer
//!                                           each as len:u32 followed by UTF-8 bytes
//! ```
//!
//! A record that is cut short or fails its checksum at the very end of the
//! file is a torn append and gets truncated on open. A bad record followed by
//! more data is corruption and refuses to open.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use chrono::DateTime;

use super::types::{BoundingBox, EventId, InteractionEvent};
use crate::error::{Error, Result};
use crate::gateway::Embedding;

pub const MAGIC: &[u8; 8] = b"ILRNEVT1";
pub const RECORD_VERSION: u8 = 1;
const FLAG_LOCALIZATION: u8 = 1;

pub fn encode(event: &InteractionEvent) -> Result<Vec<u8>> {
    let dim = event.e_img.dim();
    let created = event
        .created_at
        .timestamp_nanos_opt()
        .ok_or_else(|| Error::InvalidEvent("created_at is outside the representable range".into()))?;
    let mut body = Vec::with_capacity(64 + dim * 8 + event.question.len() + event.answer.len() + 128);
    body.push(RECORD_VERSION);
    body.push(if event.localization_flagged { FLAG_LOCALIZATION } else { 0 });
    body.extend_from_slice(&0u16.to_le_bytes());
    body.extend_from_slice(&event.event_id.0.to_le_bytes());
    body.extend_from_slice(&created.to_le_bytes());
    let b = &event.subject_bbox;
    for v in [b.x0, b.y0, b.x1, b.y1] {
        body.extend_from_slice(&v.to_le_bytes());
    }
    body.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in event.e_img.values().iter().chain(event.e_text.values()) {
        body.extend_from_slice(&v.to_le_bytes());
    }
    for s in [
        event.image_ref.as_str(),
        event.session_id.as_str(),
        event.provider_tag.as_str(),
        event.question.as_str(),
        event.answer.as_str(),
    ] {
        body.extend_from_slice(&(s.len() as u32).to_le_bytes());
        body.extend_from_slice(s.as_bytes());
    }

    let mut record = Vec::with_capacity(8 + body.len());
    record.extend_from_slice(&(body.len() as u32).to_le_bytes());
    record.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    record.extend_from_slice(&body);
    Ok(record)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::StorageFailure(format!("record truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| Error::StorageFailure(format!("record string is not UTF-8: {e}")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n.checked_mul(4).ok_or_else(|| Error::StorageFailure("dim overflow".into()))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }
}

pub fn decode_body(body: &[u8]) -> Result<InteractionEvent> {
    let mut c = Cursor { buf: body, pos: 0 };
    let [version, flags] = c.array::<2>()?;
    if version != RECORD_VERSION {
        return Err(Error::StorageFailure(format!("unsupported record version {version}")));
    }
    c.take(2)?;
    let event_id = EventId(u64::from_le_bytes(c.array()?));
    let created_at = DateTime::from_timestamp_nanos(i64::from_le_bytes(c.array()?));
    let mut bbox = [0f64; 4];
    for v in &mut bbox {
        *v = f64::from_le_bytes(c.array()?);
    }
    let dim = c.u32()? as usize;
    let img = c.floats(dim)?;
    let text = c.floats(dim)?;
    let image_ref = c.string()?.parse()?;
    let session_id = c.string()?;
    let provider_tag = c.string()?;
    let question = c.string()?;
    let answer = c.string()?;
    if c.pos != body.len() {
        return Err(Error::StorageFailure("trailing bytes in record".into()));
    }
    let corrupt = |e: Error| Error::StorageFailure(format!("stored embedding invalid: {e}"));
    Ok(InteractionEvent {
        event_id,
        image_ref,
        subject_bbox: BoundingBox { x0: bbox[0], y0: bbox[1], x1: bbox[2], y1: bbox[3] },
        question,
        answer,
        e_img: Embedding::from_raw(img, provider_tag.clone()).map_err(corrupt)?,
        e_text: Embedding::from_raw(text, provider_tag.clone()).map_err(corrupt)?,
        created_at,
        session_id,
        provider_tag,
        localization_flagged: flags & FLAG_LOCALIZATION != 0,
    })
}

/// Split a complete log image into events. Returns the events and the byte
/// length of the valid prefix; anything beyond it is a torn tail.
pub fn scan(data: &[u8]) -> Result<(Vec<InteractionEvent>, usize)> {
    if data.len() < MAGIC.len() || &data[..MAGIC.len()] != MAGIC {
        return Err(Error::StorageFailure("event log has a bad magic header".into()));
    }
    let mut events = Vec::new();
    let mut pos = MAGIC.len();
    while pos < data.len() {
        let rest = &data[pos..];
        if rest.len() < 8 {
            break;
        }
        let len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(rest[4..8].try_into().expect("4 bytes"));
        let Some(body) = rest.get(8..8 + len) else { break };
        if crc32fast::hash(body) != crc {
            if pos + 8 + len == data.len() {
                break;
            }
            return Err(Error::StorageFailure(format!("checksum mismatch in record at byte {pos}")));
        }
        events.push(decode_body(body)?);
        pos += 8 + len;
    }
    Ok((events, pos))
}

pub struct LogWriter {
    file: File,
    sync: bool,
}

impl LogWriter {
    /// Open (or create) the log, truncate any torn tail, and return the
    /// writer plus every stored event.
    pub fn open(path: &Path, sync: bool) -> Result<(Self, Vec<InteractionEvent>)> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)
            .map_err(|e| Error::storage("opening event log", e))?;
        let mut data = Vec::new();
        file.read_to_end(&mut data).map_err(|e| Error::storage("reading event log", e))?;
        let events = if data.is_empty() {
            file.write_all(MAGIC).map_err(|e| Error::storage("writing log header", e))?;
            file.sync_all().map_err(|e| Error::storage("syncing event log", e))?;
            Vec::new()
        } else {
            let (events, valid) = scan(&data)?;
            if valid < data.len() {
                tracing::warn!(
                    dropped_bytes = data.len() - valid,
                    "truncating torn record at end of event log"
                );
                file.set_len(valid as u64).map_err(|e| Error::storage("truncating torn tail", e))?;
                file.sync_all().map_err(|e| Error::storage("syncing event log", e))?;
            }
            events
        };
        file.seek(SeekFrom::End(0)).map_err(|e| Error::storage("seeking event log", e))?;
        Ok((Self { file, sync }, events))
    }

    pub fn append(&mut self, record: &[u8]) -> Result<()> {
        let start = self.file.stream_position().map_err(|e| Error::storage("event log position", e))?;
        let written = self.file.write_all(record).and_then(|_| {
            if self.sync {
                self.file.sync_data()
            } else {
                Ok(())
            }
        });
        if let Err(e) = written {
            // roll back a partial append so the next one starts on a record boundary
            let _ = self.file.set_len(start);
            let _ = self.file.seek(SeekFrom::Start(start));
            return Err(Error::storage("appending event", e));
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.sync_all().map_err(|e| Error::storage("syncing event log", e))
    }
}
