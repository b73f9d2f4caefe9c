//! Versioned binary parameter layout (dims, then row-major payloads) with
//! byte-exact round-trips, plus a human-readable dump for debugging.

use crate::error::{Error, Result};
use crate::model::params::{
    AdaptationParams, ClassifierParams, ExtractorParams, LinearLayer, ModelParams,
};
use crate::numerics::Matrix;
use crate::wire::{ByteReader, ByteWriter};

const MODEL_MAGIC: [u8; 4] = *b"FDMP";
const MODEL_VERSION: u16 = 1;

fn put_matrix(w: &mut ByteWriter, m: &Matrix) {
    w.put_u32(m.rows() as u32);
    w.put_u32(m.cols() as u32);
    for v in m.data() {
        w.put_f64(*v);
    }
}

fn take_matrix(r: &mut ByteReader) -> Result<Matrix> {
    let rows = r.take_u32()? as usize;
    let cols = r.take_u32()? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.take_f64()?);
    }
    Matrix::from_vec(rows, cols, data)
}

pub(crate) fn put_extractor(w: &mut ByteWriter, phi: &ExtractorParams) {
    w.put_u8(phi.layers.len() as u8);
    for layer in &phi.layers {
        put_matrix(w, &layer.weights);
        w.put_f64_slice(&layer.bias);
    }
}

pub(crate) fn take_extractor(r: &mut ByteReader) -> Result<ExtractorParams> {
    let count = r.take_u8()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let weights = take_matrix(r)?;
        let bias = r.take_f64_vec()?;
        if bias.len() != weights.rows() {
            return Err(Error::Decode("layer bias length".into()));
        }
        layers.push(LinearLayer { weights, bias });
    }
    Ok(ExtractorParams { layers })
}

pub(crate) fn put_adaptation(w: &mut ByteWriter, psi: &AdaptationParams) {
    put_matrix(w, &psi.w);
    w.put_f64(psi.b);
    w.put_f64_slice(&psi.gamma);
    w.put_f64_slice(&psi.beta);
    w.put_f64_slice(&psi.mu);
    w.put_f64_slice(&psi.sigma);
    w.put_f64(psi.bn_momentum);
    w.put_f64(psi.bn_epsilon);
}

pub(crate) fn take_adaptation(r: &mut ByteReader) -> Result<AdaptationParams> {
    let w_mat = take_matrix(r)?;
    let b = r.take_f64()?;
    let gamma = r.take_f64_vec()?;
    let beta = r.take_f64_vec()?;
    let mu = r.take_f64_vec()?;
    let sigma = r.take_f64_vec()?;
    let bn_momentum = r.take_f64()?;
    let bn_epsilon = r.take_f64()?;
    let m = w_mat.rows();
    if w_mat.cols() != m
        || [&gamma, &beta, &mu, &sigma].iter().any(|v| v.len() != m)
    {
        return Err(Error::Decode("adaptation dims".into()));
    }
    Ok(AdaptationParams {
        w: w_mat,
        b,
        gamma,
        beta,
        mu,
        sigma,
        bn_momentum,
        bn_epsilon,
    })
}

pub(crate) fn put_classifier(w: &mut ByteWriter, nu: &ClassifierParams) {
    put_matrix(w, &nu.weights);
    w.put_f64_slice(&nu.bias);
}

pub(crate) fn take_classifier(r: &mut ByteReader) -> Result<ClassifierParams> {
    let weights = take_matrix(r)?;
    let bias = r.take_f64_vec()?;
    if bias.len() != weights.rows() {
        return Err(Error::Decode("classifier bias length".into()));
    }
    Ok(ClassifierParams { weights, bias })
}

/// Serialize the extractor group alone (freezing checks compare these).
pub fn serialize_extractor(phi: &ExtractorParams) -> Vec<u8> {
    let mut w = ByteWriter::new();
    put_extractor(&mut w, phi);
    w.into_bytes()
}

/// Serialize the classifier group alone.
pub fn serialize_classifier(nu: &ClassifierParams) -> Vec<u8> {
    let mut w = ByteWriter::new();
    put_classifier(&mut w, nu);
    w.into_bytes()
}

/// Serialize the adaptation group alone (protocol payloads embed this).
pub fn encode_adaptation(psi: &AdaptationParams) -> Vec<u8> {
    let mut w = ByteWriter::new();
    put_adaptation(&mut w, psi);
    w.into_bytes()
}

pub fn decode_adaptation(bytes: &[u8]) -> Result<AdaptationParams> {
    let mut r = ByteReader::new(bytes);
    let psi = take_adaptation(&mut r)?;
    r.finish()?;
    Ok(psi)
}

/// Full model snapshot, versioned and length-prefixed per tensor.
pub fn encode_model(params: &ModelParams) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.put_bytes(&MODEL_MAGIC);
    w.put_u16(MODEL_VERSION);
    put_extractor(&mut w, &params.phi);
    put_adaptation(&mut w, &params.psi);
    put_classifier(&mut w, &params.nu);
    w.put_u8(params.frozen_phi as u8);
    w.put_u8(params.frozen_nu as u8);
    w.into_bytes()
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take_bytes(4)?;
    if magic != MODEL_MAGIC {
        return Err(Error::Decode("bad model magic".into()));
    }
    let version = r.take_u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Decode(format!("unsupported model version {version}")));
    }
    let phi = take_extractor(&mut r)?;
    let psi = take_adaptation(&mut r)?;
    let nu = take_classifier(&mut r)?;
    let frozen_phi = r.take_u8()? != 0;
    let frozen_nu = r.take_u8()? != 0;
    r.finish()?;
    Ok(ModelParams {
        phi,
        psi,
        nu,
        frozen_phi,
        frozen_nu,
    })
}

/// Human-readable parameter listing for debugging; not meant to be parsed.
pub fn model_text_dump(params: &ModelParams) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    writeln!(
        s,
        "model d={} m={} L={} frozen_phi={} frozen_nu={}",
        params.input_dim(),
        params.embedding_dim(),
        params.class_count(),
        params.frozen_phi,
        params.frozen_nu
    )
    .unwrap();
    for (i, layer) in params.phi.layers.iter().enumerate() {
        writeln!(
            s,
            "extractor.layer{} weights {}x{}",
            i,
            layer.weights.rows(),
            layer.weights.cols()
        )
        .unwrap();
        for r in 0..layer.weights.rows() {
            writeln!(s, "  {:?}", layer.weights.row(r)).unwrap();
        }
        writeln!(s, "extractor.layer{i} bias {:?}", layer.bias).unwrap();
    }
    writeln!(s, "adaptation.W {}x{}", params.psi.w.rows(), params.psi.w.cols()).unwrap();
    for r in 0..params.psi.w.rows() {
        writeln!(s, "  {:?}", params.psi.w.row(r)).unwrap();
    }
    writeln!(s, "adaptation.b {:?}", params.psi.b).unwrap();
    writeln!(s, "adaptation.gamma {:?}", params.psi.gamma).unwrap();
    writeln!(s, "adaptation.beta {:?}", params.psi.beta).unwrap();
    writeln!(s, "adaptation.mu {:?}", params.psi.mu).unwrap();
    writeln!(s, "adaptation.sigma {:?}", params.psi.sigma).unwrap();
    writeln!(
        s,
        "classifier.weights {}x{}",
        params.nu.weights.rows(),
        params.nu.weights.cols()
    )
    .unwrap();
    for r in 0..params.nu.weights.rows() {
        writeln!(s, "  {:?}", params.nu.weights.row(r)).unwrap();
    }
    writeln!(s, "classifier.bias {:?}", params.nu.bias).unwrap();
    s
}
