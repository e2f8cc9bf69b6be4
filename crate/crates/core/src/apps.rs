// SPDX-License-Identifier: Apache-2.0

//! Built-in trusted apps.
//!
//! `iperftz` runs the traffic client. Its open entry point takes the argument
//! region; `CMD_RUN_MEASUREMENT` takes the metrics region and writes the
//! results there. `CMD_NOOP` does nothing and exists to measure bare
//! invocation cost.
//!
//! `kvstore` hosts a [`KvStore`] on the trusted heap. `PUT`, `GET` and `DEL`
//! take `[Value{a: key}, Value{a: offset, b: len}, MemRef]`; the value bytes
//! live at `[offset, offset + len)` of the memref. `GET` and `DEL` report
//! found (1) or not found (0) in the first parameter's `b`.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::boundary::{Context, Ioctl, TaParam, TeeError, TrustedApp, TrustedEnv};
use crate::client::{fill_dummy, measure, TeeTransmitter};
use crate::config::RunConfig;
use crate::kvstore::{KvError, KvStore};
use crate::metrics::TransferMetrics;

pub const IPERF_APP: &str = "iperftz";
pub const KV_APP: &str = "kvstore";

pub const CMD_NOOP: u32 = 0;
pub const CMD_RUN_MEASUREMENT: u32 = 1;

pub const CMD_KV_PUT: u32 = 1;
pub const CMD_KV_GET: u32 = 2;
pub const CMD_KV_DEL: u32 = 3;

pub const ARGS_REGION_SIZE: usize = 4096;
pub const METRICS_REGION_SIZE: usize = 16 * 1024;

pub(crate) fn register_builtin(ctx: &Context) {
    ctx.register_app(IPERF_APP, || Box::new(IperfApp::default()));
    ctx.register_app(KV_APP, || Box::new(KvApp::default()));
}

/// Serializes `value` as a little-endian u32 length followed by JSON.
pub fn encode_frame<T: Serialize>(value: &T) -> Vec<u8> {
    let body = serde_json::to_vec(value).expect("serializable");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode_frame<T: DeserializeOwned>(raw: &[u8]) -> Result<T, TeeError> {
    let len = raw
        .get(..4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .ok_or_else(|| TeeError::BadParameters("frame shorter than its header".into()))?;
    let body = raw
        .get(4..4 + len)
        .ok_or_else(|| TeeError::BadParameters("frame length exceeds buffer".into()))?;
    serde_json::from_slice(body).map_err(|e| TeeError::BadParameters(e.to_string()))
}

fn read_frame<T: DeserializeOwned>(param: &TaParam) -> Result<T, TeeError> {
    let mem = param.as_memref()?;
    let header = mem.read_vec(0, 4)?;
    let len = u32::from_le_bytes(header.try_into().unwrap()) as usize;
    let raw = mem.read_vec(0, 4 + len)?;
    decode_frame(&raw)
}

#[derive(Default)]
struct IperfApp {
    config: Option<RunConfig>,
}

impl IperfApp {
    fn run(&self, env: &mut TrustedEnv, cfg: &RunConfig) -> Result<TransferMetrics, TeeError> {
        let mut chunk = env.alloc(cfg.chunk_size)?;
        fill_dummy(&mut chunk, cfg.seed);
        let mut socket = match env.socket_open(&cfg.host, cfg.port, cfg.protocol) {
            Ok(s) => s,
            Err(e) => {
                return Ok(TransferMetrics {
                    batch_factor: 1,
                    error: Some(e.to_string()),
                    ..Default::default()
                })
            }
        };
        // Buffer sizing is advisory, as with setsockopt.
        let _ = env.socket_ioctl(&mut socket, &Ioctl::SetBufSizes(cfg.socket_buffer_size));
        let metrics = measure(
            &mut TeeTransmitter {
                env,
                socket: &mut socket,
            },
            &cfg.stop,
            &chunk,
        );
        let _ = env.socket_close(&mut socket);
        Ok(metrics)
    }
}

impl TrustedApp for IperfApp {
    fn open_session(
        &mut self,
        _env: &mut TrustedEnv,
        params: &mut [TaParam],
    ) -> Result<(), TeeError> {
        if let Some(p) = params.first() {
            self.config = Some(read_frame(p)?);
        }
        Ok(())
    }

    fn invoke_command(
        &mut self,
        env: &mut TrustedEnv,
        command: u32,
        params: &mut [TaParam],
    ) -> Result<(), TeeError> {
        match command {
            CMD_NOOP => Ok(()),
            CMD_RUN_MEASUREMENT => {
                let cfg = self
                    .config
                    .clone()
                    .ok_or(TeeError::BadState("no arguments were passed at open"))?;
                let out = params
                    .first()
                    .ok_or_else(|| TeeError::BadParameters("missing metrics region".into()))?
                    .as_memref()?
                    .clone();
                let metrics = self.run(env, &cfg)?;
                let frame = encode_frame(&metrics);
                if frame.len() > out.len() {
                    return Err(TeeError::BadParameters("metrics region too small".into()));
                }
                out.write(0, &frame)
            }
            other => Err(TeeError::NotSupported(other)),
        }
    }
}

#[derive(Default)]
struct KvApp {
    store: Option<KvStore>,
}

impl TrustedApp for KvApp {
    fn open_session(
        &mut self,
        env: &mut TrustedEnv,
        _params: &mut [TaParam],
    ) -> Result<(), TeeError> {
        self.store = Some(KvStore::with_budget(env.heap().clone()));
        Ok(())
    }

    fn invoke_command(
        &mut self,
        _env: &mut TrustedEnv,
        command: u32,
        params: &mut [TaParam],
    ) -> Result<(), TeeError> {
        let store = self
            .store
            .as_mut()
            .ok_or(TeeError::BadState("store not initialized"))?;
        if params.len() < 3 {
            return Err(TeeError::BadParameters(
                "expected key, window and memref".into(),
            ));
        }
        let (key, _) = params[0].as_value()?;
        let (offset, len) = params[1].as_value()?;
        let (offset, len) = (offset as usize, len as usize);
        let mem = params[2].as_memref()?.clone();
        let found = match command {
            CMD_KV_PUT => {
                let value = mem.with_slice(offset, len, |v| store.put(key, v))?;
                match value {
                    Ok(()) => true,
                    Err(KvError::OutOfMemory(e)) => return Err(e.into()),
                    Err(KvError::EmptyValue) => {
                        return Err(TeeError::BadParameters("empty value".into()))
                    }
                }
            }
            CMD_KV_GET => match store.lookup(key) {
                Some(v) => {
                    let n = v.len().min(len);
                    mem.write(offset, &v[..n])?;
                    true
                }
                None => false,
            },
            CMD_KV_DEL => store.del(key),
            other => return Err(TeeError::NotSupported(other)),
        };
        params[0] = TaParam::Value {
            a: key,
            b: u64::from(found),
        };
        Ok(())
    }

    fn close_session(&mut self, _env: &mut TrustedEnv) {
        self.store = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let cfg = RunConfig::default();
        let frame = encode_frame(&cfg);
        assert_eq!(decode_frame::<RunConfig>(&frame).unwrap(), cfg);
        assert!(decode_frame::<RunConfig>(&frame[..3]).is_err());
        assert!(decode_frame::<RunConfig>(&frame[..frame.len() - 1]).is_err());
    }
}
