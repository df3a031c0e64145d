use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamState;
use super::config::TrainConfig;
use super::state::{Nets, TrainState, DATA_STREAM, PRIOR_STREAM};
use crate::error::{Error, Result};
use crate::features::NormStats;
use crate::models::DomainCode;
use crate::netblocks::{read_entries, write_entries, Parameterized, Tensor};
use crate::seeding::{self, StreamPos};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SDAC";
pub const CHECKPOINT_VERSION: u32 = 1;
const TRAILER_LEN: usize = 16;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    norm_stats_path: Option<PathBuf>,
    /// Hex SHA-256 of the parameter and moment sections.
    content_hash: String,
    norm_mean: Vec<f32>,
    norm_std: Vec<f32>,
    data_stream: StreamPos,
    prior_stream: StreamPos,
    adam_steps: Vec<u64>,
    domain_means: Option<[Vec<f32>; 2]>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes `state` into the checkpoint byte layout.
pub fn encode_checkpoint(state: &TrainState) -> Result<Vec<u8>> {
    let stores = state.nets.stores();
    let names = state.nets.store_names();
    let mut body = Vec::new();
    let params = stores.iter().zip(names).flat_map(|(s, sn)| {
        (0..s.len()).map(move |i| (format!("{sn}/{}", s.name(i)), s.value(i)))
    });
    write_entries(&mut body, params.collect::<Vec<_>>().into_iter())?;
    let mut moments: Vec<(String, &Tensor<f32>)> = Vec::new();
    for ((s, sn), m) in stores.iter().zip(names).zip(&state.moments) {
        for i in 0..s.len() {
            moments.push((format!("{sn}/{}/m", s.name(i)), &m.m[i]));
            moments.push((format!("{sn}/{}/v", s.name(i)), &m.v[i]));
        }
    }
    write_entries(&mut body, moments.into_iter())?;

    let meta = Meta {
        config: state.config.clone(),
        norm_stats_path: state.norm_stats_path.clone(),
        content_hash: hex(&Sha256::digest(&body)),
        norm_mean: state.norm_stats.mean.clone(),
        norm_std: state.norm_stats.std.clone(),
        data_stream: seeding::position(&state.data_rng),
        prior_stream: seeding::position(&state.prior_rng),
        adam_steps: state.moments.iter().map(|m| m.t).collect(),
        domain_means: state.domain_means.as_ref().map(|[a, b]| [a.0.clone(), b.0.clone()]),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(body.len() + json.len() + 64);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    let trailer = Sha256::digest(&out);
    out.extend_from_slice(&trailer[..TRAILER_LEN]);
    Ok(out)
}

/// Writes atomically via a sibling temporary file.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state)?;
    let tmp = path.with_extension("sdac.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    decode_checkpoint(&bytes)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 20 + TRAILER_LEN {
        return Err(corrupt(format!("{} bytes is too short", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionError {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (payload, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);
    if Sha256::digest(payload)[..TRAILER_LEN] != *trailer {
        return Err(corrupt("content hash mismatch"));
    }
    let step = u64::from_le_bytes(payload[8..16].try_into().unwrap());
    let json_len = u32::from_le_bytes(payload[16..20].try_into().unwrap()) as usize;
    let body_start = 20usize
        .checked_add(json_len)
        .filter(|&e| e <= payload.len())
        .ok_or_else(|| corrupt("metadata overruns file"))?;
    let meta: Meta =
        serde_json::from_slice(&payload[20..body_start]).map_err(|e| corrupt(format!("metadata: {e}")))?;
    let body = &payload[body_start..];
    if hex(&Sha256::digest(body)) != meta.content_hash {
        return Err(corrupt("parameter hash mismatch"));
    }
    meta.config.validate().map_err(|e| corrupt(format!("config: {e}")))?;

    let mut r = Cursor::new(body);
    let params = read_entries(&mut r).map_err(|e| corrupt(format!("parameters: {e}")))?;
    let moments = read_entries(&mut r).map_err(|e| corrupt(format!("moments: {e}")))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", rest.len())));
    }

    // Build an architecture skeleton, then overwrite every tensor.
    let mut nets = Nets::init(meta.config.model, &mut seeding::stream(0, "skeleton"))?;
    let names = nets.store_names();
    let mut params = params.into_iter();
    let mut moments = moments.into_iter();
    let take = |it: &mut std::vec::IntoIter<(String, Tensor<f32>)>, want: &str, shape: &[usize]| {
        match it.next() {
            Some((n, t)) if n == want && t.shape() == shape => Ok(t),
            Some((n, t)) => Err(corrupt(format!("expected {want} {shape:?}, found {n} {:?}", t.shape()))),
            None => Err(corrupt(format!("missing {want}"))),
        }
    };
    if meta.adam_steps.len() != names.len() {
        return Err(corrupt("optimizer step count list has the wrong length"));
    }
    let mut adam = Vec::with_capacity(names.len());
    for ((store, sn), t) in nets.stores_mut().into_iter().zip(names).zip(&meta.adam_steps) {
        let mut st = AdamState::zeros_like(store);
        st.t = *t;
        for i in 0..store.len() {
            let shape = store.value(i).shape().to_vec();
            let pname = format!("{sn}/{}", store.name(i));
            *store.value_mut(i) = take(&mut params, &pname, &shape)?;
            st.m[i] = take(&mut moments, &format!("{pname}/m"), &shape)?;
            st.v[i] = take(&mut moments, &format!("{pname}/v"), &shape)?;
        }
        adam.push(st);
    }
    if params.next().is_some() || moments.next().is_some() {
        return Err(corrupt("unexpected extra tensors"));
    }
    let norm_stats = NormStats::new(meta.norm_mean, meta.norm_std).map_err(|e| corrupt(format!("norm stats: {e}")))?;
    let domain_means = match meta.domain_means {
        Some([a, b]) => Some([
            DomainCode::new(a).map_err(|e| corrupt(e.to_string()))?,
            DomainCode::new(b).map_err(|e| corrupt(e.to_string()))?,
        ]),
        None => None,
    };
    let seed = meta.config.seed;
    Ok(TrainState {
        step,
        nets,
        moments: adam,
        data_rng: seeding::resume(seed, DATA_STREAM, meta.data_stream),
        prior_rng: seeding::resume(seed, PRIOR_STREAM, meta.prior_stream),
        norm_stats,
        norm_stats_path: meta.norm_stats_path,
        domain_means,
        config: meta.config,
    })
}
