//! File formats: binary dataset ("GCA1"), model checkpoints ("GCAM" /
//! "EBMM") and the sweep CSV schema. All binary integers and floats are
//! little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::ebm::{EbmParams, HEAD_PREFIX};
use crate::error::{Error, Result};
use crate::gca::{EncoderNetwork, GcaModel, RatioParams};
use crate::matrix::Matrix;
use crate::nn::{Activation, MlpSpec, ParamStore};
use crate::synthdata::{GraphDataset, LinkModel};

const DATASET_MAGIC: &[u8; 4] = b"GCA1";
const GCA_MODEL_MAGIC: &[u8; 4] = b"GCAM";
const EBM_MODEL_MAGIC: &[u8; 4] = b"EBMM";

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn check_magic(r: &mut impl Read, expected: &[u8; 4], what: &str) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != expected {
        return Err(Error::Format(format!(
            "bad {what} magic: expected {:?}, got {:?}",
            String::from_utf8_lossy(expected),
            String::from_utf8_lossy(&m)
        )));
    }
    Ok(())
}

pub fn save_dataset(ds: &GraphDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    write_u32(&mut w, ds.n() as u32)?;
    write_u32(&mut w, ds.d_s() as u32)?;
    write_u32(&mut w, ds.d_x() as u32)?;
    write_u32(&mut w, ds.k_max() as u32)?;
    write_u64(&mut w, ds.link_seed)?;
    write_f64s(&mut w, ds.link_model.alpha().data())?;
    write_f64s(&mut w, ds.s_true.data())?;
    write_f64s(&mut w, ds.x.data())?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<GraphDataset> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, DATASET_MAGIC, "dataset")?;
    let n = read_u32(&mut r)? as usize;
    let d_s = read_u32(&mut r)? as usize;
    let d_x = read_u32(&mut r)? as usize;
    let k_max = read_u32(&mut r)? as usize;
    let link_seed = read_u64(&mut r)?;
    let alpha = Matrix::from_vec(k_max, d_s, read_f64s(&mut r, k_max * d_s)?)?;
    let s_true = Matrix::from_vec(n, d_s, read_f64s(&mut r, n * d_s)?)?;
    let x = Matrix::from_vec(n, d_x, read_f64s(&mut r, n * d_x)?)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after dataset payload".into()));
    }
    Ok(GraphDataset {
        x,
        s_true,
        link_seed,
        link_model: LinkModel::from_alpha(alpha)?,
    })
}

fn write_param_store(w: &mut impl Write, params: &ParamStore) -> Result<()> {
    let entries: Vec<_> = params.iter().collect();
    write_u32(w, entries.len() as u32)?;
    for (name, m) in entries {
        let bytes = name.as_bytes();
        write_u32(w, bytes.len() as u32)?;
        w.write_all(bytes)?;
        write_u32(w, m.rows() as u32)?;
        write_u32(w, m.cols() as u32)?;
        write_f64s(w, m.data())?;
    }
    Ok(())
}

fn read_param_store(r: &mut impl Read) -> Result<ParamStore> {
    let n = read_u32(r)? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let name_len = read_u32(r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("non-utf8 parameter name".into()))?;
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let m = Matrix::from_vec(rows, cols, read_f64s(r, rows * cols)?)?;
        params.insert(&name, m);
    }
    Ok(params)
}

fn write_widths(w: &mut impl Write, spec: &MlpSpec) -> Result<()> {
    write_u32(w, spec.layer_widths.len() as u32)?;
    for &width in &spec.layer_widths {
        write_u32(w, width as u32)?;
    }
    Ok(())
}

fn read_widths(r: &mut impl Read) -> Result<Vec<usize>> {
    let n = read_u32(r)? as usize;
    (0..n).map(|_| Ok(read_u32(r)? as usize)).collect()
}

pub fn save_gca_model(model: &GcaModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GCA_MODEL_MAGIC)?;
    write_widths(&mut w, &model.encoder.spec)?;
    write_u32(&mut w, model.ratio.k_max() as u32)?;
    write_param_store(&mut w, &model.encoder.params)?;
    write_f64s(&mut w, model.ratio.beta.data())?;
    write_f64s(&mut w, model.ratio.bias.data())?;
    w.flush()?;
    Ok(())
}

pub fn load_gca_model(path: &Path) -> Result<GcaModel> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, GCA_MODEL_MAGIC, "GCA checkpoint")?;
    let widths = read_widths(&mut r)?;
    let k_max = read_u32(&mut r)? as usize;
    let spec = MlpSpec::new(widths, Activation::Relu)?;
    let d_s = spec.output_dim();
    let params = read_param_store(&mut r)?;
    let beta = Matrix::from_vec(k_max, d_s, read_f64s(&mut r, k_max * d_s)?)?;
    let bias = Matrix::from_vec(k_max, 1, read_f64s(&mut r, k_max)?)?;
    Ok(GcaModel {
        encoder: EncoderNetwork { spec, params },
        ratio: RatioParams { beta, bias },
    })
}

pub fn save_ebm_model(model: &EbmParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EBM_MODEL_MAGIC)?;
    write_widths(&mut w, &model.encoder.spec)?;
    write_param_store(&mut w, &model.encoder.params)?;
    write_param_store(&mut w, &model.head_params)?;
    w.flush()?;
    Ok(())
}

pub fn load_ebm_model(path: &Path) -> Result<EbmParams> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, EBM_MODEL_MAGIC, "EBM checkpoint")?;
    let widths = read_widths(&mut r)?;
    let spec = MlpSpec::new(widths, Activation::Relu)?;
    let d_s = spec.output_dim();
    let params = read_param_store(&mut r)?;
    let head_params = read_param_store(&mut r)?;
    let head_spec = MlpSpec::new(vec![d_s, 1], Activation::None)?;
    if head_params.get(&MlpSpec::weight_name(HEAD_PREFIX, 0)).is_none() {
        return Err(Error::Format("EBM checkpoint missing head weights".into()));
    }
    Ok(EbmParams {
        encoder: EncoderNetwork { spec, params },
        head_spec,
        head_params,
    })
}
