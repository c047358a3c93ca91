//! Parameter (`VGAN`) and optimizer-state (`VGST`) checkpoint files.
//!
//! Both are a magic, a `u32` version and a sequence of records running to the
//! end of the file: `u32` name length, UTF-8 name, `u32` rank, `u64` extents,
//! then `f32` little-endian values. `VGST` also stores the Adam step counter
//! as a `u64` right after the version, and its records are named `m.<param>`
//! and `v.<param>`.

use std::fs;
use std::path::Path;

use vgan_core::optim::AdamState;
use vgan_core::{ParamStore, Tensor};

use crate::bytes::{put_f32s, write_atomic, Reader};
use crate::error::{io_err, FormatError, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"VGAN";
pub const STATE_MAGIC: &[u8; 4] = b"VGST";
pub const VERSION: u32 = 1;

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    put_f32s(out, t.data().iter().copied());
}

fn read_records(r: &mut Reader<'_>) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut out = Vec::new();
    while !r.is_empty() {
        let len = r.u32()? as usize;
        let offset = r.offset();
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| FormatError::Invalid {
                offset,
                reason: format!("parameter name is not UTF-8: {e}"),
            })?
            .to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.extent()).collect::<Result<Vec<_>>>()?;
        let offset = r.offset();
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| FormatError::Invalid {
                offset,
                reason: format!("shape {shape:?} of {name} overflows"),
            })?;
        let values = r.f32s(count)?;
        out.push((name, Tensor::from_vec(&shape, values)?));
    }
    Ok(out)
}

fn header(magic: &[u8; 4]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out
}

fn check_header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<()> {
    r.magic(magic)?;
    let offset = r.offset();
    match r.u32()? {
        VERSION => Ok(()),
        found => Err(FormatError::Version { offset, found }),
    }
}

pub fn encode_params(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = header(PARAMS_MAGIC);
    for e in store.entries() {
        put_record(&mut out, &e.name, &e.value);
    }
    out
}

/// Overwrite `store` from an encoded checkpoint. Names, count and shapes
/// must all match the model.
pub fn decode_params_into(bytes: &[u8], store: &mut ParamStore<f32>) -> Result<()> {
    let mut r = Reader::new(bytes);
    check_header(&mut r, PARAMS_MAGIC)?;
    store.load_named(read_records(&mut r)?)?;
    Ok(())
}

pub fn encode_state(state: &AdamState<f32>, store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = header(STATE_MAGIC);
    out.extend_from_slice(&state.t.to_le_bytes());
    for (prefix, moments) in [("m", &state.m), ("v", &state.v)] {
        for (e, t) in store.entries().iter().zip(moments) {
            put_record(&mut out, &format!("{prefix}.{}", e.name), t);
        }
    }
    out
}

pub fn decode_state_into(bytes: &[u8], state: &mut AdamState<f32>, store: &ParamStore<f32>) -> Result<()> {
    let mut r = Reader::new(bytes);
    check_header(&mut r, STATE_MAGIC)?;
    let t = r.u64()?;
    let records = read_records(&mut r)?;
    let n = store.len();
    if records.len() != 2 * n {
        return Err(FormatError::Invalid {
            offset: r.offset(),
            reason: format!("{} optimizer records for {n} parameters", records.len()),
        });
    }
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for (k, (name, tensor)) in records.into_iter().enumerate() {
        let (prefix, dst) = if k < n { ("m", &mut m) } else { ("v", &mut v) };
        let entry = &store.entries()[k % n];
        let expected = format!("{prefix}.{}", entry.name);
        if name != expected || tensor.shape() != entry.value.shape() {
            return Err(FormatError::Invalid {
                offset: 0,
                reason: format!("record {k} is {name} {:?}, expected {expected} {:?}", tensor.shape(), entry.value.shape()),
            });
        }
        dst.push(tensor);
    }
    state.t = t;
    state.m = m;
    state.v = v;
    Ok(())
}

pub fn save_params(path: &Path, store: &ParamStore<f32>) -> Result<()> {
    write_atomic(path, &encode_params(store))
}

pub fn load_params(path: &Path, store: &mut ParamStore<f32>) -> Result<()> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_params_into(&bytes, store)
}

pub fn save_state(path: &Path, state: &AdamState<f32>, store: &ParamStore<f32>) -> Result<()> {
    write_atomic(path, &encode_state(state, store))
}

pub fn load_state(path: &Path, state: &mut AdamState<f32>, store: &ParamStore<f32>) -> Result<()> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_state_into(&bytes, state, store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vgan_core::optim::AdamConfig;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::from_fn(&[2, 3], |i| i as f32 - 2.5));
        s.add_buffer("a.running_mean", Tensor::full(&[3], 0.5));
        s.add("b", Tensor::scalar(7.0));
        s
    }

    #[test]
    fn params_round_trip_bitwise() {
        let src = store();
        let mut dst = store();
        for e in dst.entries_mut() {
            e.value = e.value.map(|_| 0.0);
        }
        decode_params_into(&encode_params(&src), &mut dst).unwrap();
        for (a, b) in src.entries().iter().zip(dst.entries()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn state_round_trip_keeps_step() {
        let s = store();
        let mut st = AdamState::new(&s, AdamConfig::default());
        st.t = 42;
        st.m[0].data_mut()[1] = 3.0;
        st.v[2].data_mut()[0] = 9.0;
        let mut back = AdamState::new(&s, AdamConfig::default());
        decode_state_into(&encode_state(&st, &s), &mut back, &s).unwrap();
        assert_eq!(back.t, 42);
        assert_eq!(back.m[0].data(), st.m[0].data());
        assert_eq!(back.v[2].data(), st.v[2].data());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut other = ParamStore::new();
        other.add("a.weight", Tensor::zeros(&[3, 2]));
        other.add_buffer("a.running_mean", Tensor::zeros(&[3]));
        other.add("b", Tensor::scalar(0.0));
        assert!(decode_params_into(&encode_params(&store()), &mut other).is_err());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let s = store();
        let st = AdamState::new(&s, AdamConfig::default());
        let mut dst = store();
        assert!(matches!(
            decode_params_into(&encode_state(&st, &s), &mut dst),
            Err(FormatError::BadMagic { offset: 0, .. })
        ));
    }
}
