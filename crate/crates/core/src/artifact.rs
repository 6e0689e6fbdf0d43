//! On-disk artifacts. All binary formats are little-endian and start with an
//! 8-byte magic (`SWWL-E1`, `SWWL-P1`, `SWWL-G1`, `SWWL-M1`, NUL padded).
//! Strings are a `u32` byte length followed by UTF-8; lists are a `u32`
//! count followed by their items.

use std::io::{self, BufRead, Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::features::GraphFeatures;
use crate::gp::{GpError, GpHyperParams, GpModel};
use crate::kernels::{pairwise_distances, GramFingerprint, GramMatrix, KernelConfig};
use crate::sw::{PqEmbedding, PqFingerprint, QuantileRule, DIRECTION_GENERATOR};
use crate::wl::{WlConfig, WlEmbedding};

pub const MAGIC_WL: &[u8; 8] = b"SWWL-E1\0";
pub const MAGIC_PQ: &[u8; 8] = b"SWWL-P1\0";
pub const MAGIC_GRAM: &[u8; 8] = b"SWWL-G1\0";
pub const MAGIC_MODEL: &[u8; 8] = b"SWWL-M1\0";

/// Stored in model headers: graph precision as a function of its range.
pub const RANGE_MAPPING: &str = "graph-precision=1/range^2";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("malformed artifact: {0}")]
    Malformed(String),
    #[error("fingerprint mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Gp(#[from] GpError),
}

fn malformed(msg: impl Into<String>) -> ArtifactError {
    ArtifactError::Malformed(msg.into())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String, ArtifactError> {
    let len = r.read_u32::<LE>()? as usize;
    if len > 1 << 24 {
        return Err(malformed(format!("string length {len}")));
    }
    let mut buf = vec![0; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| malformed(e.to_string()))
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> io::Result<()> {
    xs.iter().try_for_each(|&x| w.write_f64::<LE>(x))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, ArtifactError> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LE>(&mut out)?;
    Ok(out)
}

fn write_list_f64<W: Write>(w: &mut W, xs: &[f64]) -> io::Result<()> {
    w.write_u32::<LE>(xs.len() as u32)?;
    write_f64s(w, xs)
}

fn read_list_f64<R: Read>(r: &mut R) -> Result<Vec<f64>, ArtifactError> {
    let n = r.read_u32::<LE>()? as usize;
    read_f64s(r, n)
}

fn write_list_usize<W: Write>(w: &mut W, xs: &[usize]) -> io::Result<()> {
    w.write_u32::<LE>(xs.len() as u32)?;
    xs.iter().try_for_each(|&x| w.write_u64::<LE>(x as u64))
}

fn read_list_usize<R: Read>(r: &mut R) -> Result<Vec<usize>, ArtifactError> {
    let n = r.read_u32::<LE>()? as usize;
    (0..n).map(|_| Ok(r.read_u64::<LE>()? as usize)).collect()
}

fn read_len<R: Read>(r: &mut R, limit: usize, what: &str) -> Result<usize, ArtifactError> {
    let v = r.read_u64::<LE>()? as usize;
    if v > limit {
        return Err(malformed(format!("{what} = {v} exceeds {limit}")));
    }
    Ok(v)
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<(), ArtifactError> {
    let mut found = [0u8; 8];
    r.read_exact(&mut found)?;
    if &found != magic {
        return Err(ArtifactError::BadMagic {
            expected: String::from_utf8_lossy(magic).trim_end_matches('\0').to_string(),
            found: String::from_utf8_lossy(&found).trim_end_matches('\0').to_string(),
        });
    }
    Ok(())
}

fn write_fingerprint<W: Write>(w: &mut W, fp: &PqFingerprint) -> io::Result<()> {
    w.write_u64::<LE>(fp.seed)?;
    w.write_u64::<LE>(fp.stream)?;
    w.write_u64::<LE>(fp.projections as u64)?;
    w.write_u64::<LE>(fp.quantiles as u64)?;
    w.write_f64::<LE>(fp.order)?;
    w.write_u64::<LE>(fp.dim as u64)?;
    w.write_u8(match fp.rule {
        QuantileRule::Linear => 0,
        QuantileRule::InverseCdf => 1,
    })?;
    write_list_usize(w, &fp.iterations)?;
    write_str(w, DIRECTION_GENERATOR)
}

fn read_fingerprint<R: Read>(r: &mut R) -> Result<PqFingerprint, ArtifactError> {
    let seed = r.read_u64::<LE>()?;
    let stream = r.read_u64::<LE>()?;
    let projections = read_len(r, 1 << 24, "P")?;
    let quantiles = read_len(r, 1 << 24, "Q")?;
    let order = r.read_f64::<LE>()?;
    let dim = read_len(r, 1 << 24, "s")?;
    let rule = match r.read_u8()? {
        0 => QuantileRule::Linear,
        1 => QuantileRule::InverseCdf,
        other => return Err(malformed(format!("quantile rule tag {other}"))),
    };
    let iterations = read_list_usize(r)?;
    let generator = read_str(r)?;
    if generator != DIRECTION_GENERATOR {
        return Err(ArtifactError::Mismatch(format!(
            "directions drawn with `{generator}`, this build uses `{DIRECTION_GENERATOR}`"
        )));
    }
    Ok(PqFingerprint { seed, stream, projections, quantiles, order, dim, rule, iterations })
}

/// `SWWL-P1`: fingerprint, graph id, then the `P*Q` feature values.
pub fn write_pq<W: Write>(w: &mut W, e: &PqEmbedding) -> io::Result<()> {
    w.write_all(MAGIC_PQ)?;
    write_fingerprint(w, &e.fingerprint)?;
    write_str(w, &e.graph_id)?;
    write_f64s(w, &e.values)
}

pub fn read_pq<R: Read>(r: &mut R) -> Result<PqEmbedding, ArtifactError> {
    expect_magic(r, MAGIC_PQ)?;
    let fingerprint = read_fingerprint(r)?;
    let graph_id = read_str(r)?;
    let values = read_f64s(r, fingerprint.projections * fingerprint.quantiles)?;
    Ok(PqEmbedding { values, fingerprint, graph_id })
}

/// `SWWL-E1`: graph id, kept iterations, `d`, `|V|`, then row-major values.
pub fn write_wl<W: Write>(w: &mut W, e: &WlEmbedding) -> io::Result<()> {
    w.write_all(MAGIC_WL)?;
    write_str(w, &e.graph_id)?;
    write_list_usize(w, e.config.iterations_kept())?;
    w.write_u64::<LE>(e.attr_dim as u64)?;
    w.write_u64::<LE>(e.node_count() as u64)?;
    for row in e.values.row_iter() {
        for &x in row.iter() {
            w.write_f64::<LE>(x)?;
        }
    }
    Ok(())
}

pub fn read_wl<R: Read>(r: &mut R) -> Result<WlEmbedding, ArtifactError> {
    expect_magic(r, MAGIC_WL)?;
    let graph_id = read_str(r)?;
    let config = WlConfig::new(read_list_usize(r)?).map_err(|e| malformed(e.to_string()))?;
    let attr_dim = read_len(r, 1 << 20, "d")?;
    let n = read_len(r, 1 << 32, "|V|")?;
    let cols = attr_dim * config.blocks();
    let data = read_f64s(r, n * cols)?;
    Ok(WlEmbedding { values: DMatrix::from_row_slice(n, cols, &data), config, attr_dim, graph_id })
}

/// Checks that every block of every record matches the first record.
pub fn check_feature_set(features: &[GraphFeatures]) -> Result<(), ArtifactError> {
    let Some(first) = features.first() else { return Ok(()) };
    for f in features {
        if f.blocks.len() != first.blocks.len() {
            return Err(ArtifactError::Mismatch(format!(
                "record `{}` has {} blocks, `{}` has {}",
                f.id,
                f.blocks.len(),
                first.id,
                first.blocks.len()
            )));
        }
        for (a, b) in f.blocks.iter().zip(&first.blocks) {
            if a.fingerprint != b.fingerprint {
                return Err(ArtifactError::Mismatch(format!(
                    "record `{}` [{}] differs from `{}` [{}]",
                    f.id, a.fingerprint, first.id, b.fingerprint
                )));
            }
        }
    }
    Ok(())
}

fn write_kernel<W: Write>(w: &mut W, k: &Option<KernelConfig>) -> io::Result<()> {
    match k {
        None => w.write_u8(0),
        Some(k) => {
            w.write_u8(1)?;
            w.write_f64::<LE>(k.gamma)?;
            match &k.gammas_aniso {
                None => w.write_u8(0)?,
                Some(g) => {
                    w.write_u8(1)?;
                    write_list_f64(w, g)?;
                }
            }
            write_list_f64(w, &k.matern_lengthscales)?;
            w.write_f64::<LE>(k.variance)?;
            w.write_f64::<LE>(k.nugget)
        }
    }
}

fn read_kernel<R: Read>(r: &mut R) -> Result<Option<KernelConfig>, ArtifactError> {
    if r.read_u8()? == 0 {
        return Ok(None);
    }
    let gamma = r.read_f64::<LE>()?;
    let gammas_aniso = if r.read_u8()? == 1 { Some(read_list_f64(r)?) } else { None };
    let matern_lengthscales = read_list_f64(r)?;
    let variance = r.read_f64::<LE>()?;
    let nugget = r.read_f64::<LE>()?;
    Ok(Some(KernelConfig { gamma, gammas_aniso, matern_lengthscales, variance, nugget }))
}

/// `SWWL-G1`: `N`, fingerprint, block count, kernel parameters, row ids,
/// then the `N x N` matrix row-major.
pub fn write_gram_binary<W: Write>(w: &mut W, g: &GramMatrix) -> io::Result<()> {
    w.write_all(MAGIC_GRAM)?;
    w.write_u64::<LE>(g.len() as u64)?;
    write_fingerprint(w, &g.fingerprint.features)?;
    w.write_u64::<LE>(g.fingerprint.blocks as u64)?;
    write_kernel(w, &g.fingerprint.kernel)?;
    for id in &g.row_ids {
        write_str(w, id)?;
    }
    for row in g.values.row_iter() {
        for &x in row.iter() {
            w.write_f64::<LE>(x)?;
        }
    }
    Ok(())
}

pub fn read_gram_binary<R: Read>(r: &mut R) -> Result<GramMatrix, ArtifactError> {
    expect_magic(r, MAGIC_GRAM)?;
    let n = read_len(r, 1 << 20, "N")?;
    let features = read_fingerprint(r)?;
    let blocks = read_len(r, 1 << 16, "blocks")?;
    let kernel = read_kernel(r)?;
    let row_ids = (0..n).map(|_| read_str(r)).collect::<Result<Vec<_>, _>>()?;
    let data = read_f64s(r, n * n)?;
    Ok(GramMatrix {
        values: DMatrix::from_row_slice(n, n, &data),
        row_ids,
        fingerprint: GramFingerprint { features, blocks, kernel },
    })
}

fn join<T: ToString>(xs: &[T]) -> String {
    if xs.is_empty() {
        "-".to_string()
    } else {
        xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
    }
}

fn split_f64(s: &str) -> Result<Vec<f64>, ArtifactError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| x.parse().map_err(|_| malformed(format!("number `{x}`")))).collect()
}

/// Fingerprint line of the text export:
/// `N seed P Q gamma iterations r rule variance nugget lengthscales`.
///
/// `gamma` is a number, a comma list for per-iterate precisions, or
/// `distances` for a squared-distance export.
pub fn gram_text_header(g: &GramMatrix) -> String {
    let fp = &g.fingerprint.features;
    let (gamma, variance, nugget, lengthscales) = match &g.fingerprint.kernel {
        None => ("distances".to_string(), "-".to_string(), "-".to_string(), "-".to_string()),
        Some(k) => (
            match &k.gammas_aniso {
                Some(gs) => join(gs),
                None => k.gamma.to_string(),
            },
            k.variance.to_string(),
            k.nugget.to_string(),
            join(&k.matern_lengthscales),
        ),
    };
    format!(
        "{} {} {} {} {} {} {} {} {} {} {}",
        g.len(),
        fp.seed,
        fp.projections,
        fp.quantiles,
        gamma,
        join(&fp.iterations),
        fp.order,
        fp.rule.as_str(),
        variance,
        nugget,
        lengthscales
    )
}

/// Header line, then `N` rows of space-separated doubles with 17 significant digits.
pub fn write_gram_text<W: Write>(w: &mut W, g: &GramMatrix) -> io::Result<()> {
    writeln!(w, "{}", gram_text_header(g))?;
    for row in g.values.row_iter() {
        let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Parsed text Gram export. The text format carries no row ids; the
/// fingerprint fields come back as written.
#[derive(Debug, Clone, PartialEq)]
pub struct TextGram {
    pub header: String,
    pub values: DMatrix<f64>,
}

pub fn read_gram_text<R: BufRead>(r: R) -> Result<TextGram, ArtifactError> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| malformed("empty file"))??;
    let n: usize = header
        .split_whitespace()
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| malformed("header does not start with N"))?;
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        let line = lines.next().ok_or_else(|| malformed(format!("missing row {i}")))??;
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| malformed(format!("row {i}: `{t}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != n {
            return Err(malformed(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        data.extend(row);
    }
    Ok(TextGram { header, values: DMatrix::from_row_slice(n, n, &data) })
}

/// Leading fields of a text Gram header.
#[derive(Debug, Clone, PartialEq)]
pub struct GramTextHeader {
    pub n: usize,
    pub seed: u64,
    pub projections: usize,
    pub quantiles: usize,
    /// `None` for a squared-distance export.
    pub gamma: Option<Vec<f64>>,
}

/// Splits a text header back into its fields.
pub fn parse_gram_text_header(header: &str) -> Result<GramTextHeader, ArtifactError> {
    let t: Vec<&str> = header.split_whitespace().collect();
    if t.len() != 11 {
        return Err(malformed(format!("header has {} fields, expected 11", t.len())));
    }
    let p = |s: &str| s.parse::<u64>().map_err(|_| malformed(format!("integer `{s}`")));
    let gamma = if t[4] == "distances" { None } else { Some(split_f64(t[4])?) };
    Ok(GramTextHeader {
        n: p(t[0])? as usize,
        seed: p(t[1])?,
        projections: p(t[2])? as usize,
        quantiles: p(t[3])? as usize,
        gamma,
    })
}

/// `SWWL-M1`: sizes, ranges, nugget, mean, variance, log posterior, range
/// mapping, per-block fingerprints, packed lower Cholesky factor,
/// `R^-1 h`, `R^-1 (y - h theta)`, targets, then the training features.
pub fn write_model<W: Write>(w: &mut W, m: &GpModel) -> io::Result<()> {
    let n = m.len();
    let blocks = m.train[0].blocks.len();
    let scalars = m.train[0].scalars.len();
    w.write_all(MAGIC_MODEL)?;
    w.write_u64::<LE>(n as u64)?;
    w.write_u64::<LE>(m.hyper.ranges.len() as u64)?;
    w.write_u64::<LE>(blocks as u64)?;
    w.write_u64::<LE>(scalars as u64)?;
    write_f64s(w, &m.hyper.ranges)?;
    w.write_f64::<LE>(m.hyper.nugget)?;
    w.write_f64::<LE>(m.hyper.theta)?;
    w.write_f64::<LE>(m.hyper.sigma2)?;
    w.write_f64::<LE>(m.log_posterior)?;
    write_str(w, RANGE_MAPPING)?;
    for b in &m.train[0].blocks {
        write_fingerprint(w, &b.fingerprint)?;
    }
    for i in 0..n {
        for j in 0..=i {
            w.write_f64::<LE>(m.chol_lower[(i, j)])?;
        }
    }
    write_f64s(w, m.rinv_h.as_slice())?;
    write_f64s(w, m.rinv_resid.as_slice())?;
    write_f64s(w, &m.targets)?;
    for f in &m.train {
        write_str(w, &f.id)?;
        write_f64s(w, &f.scalars)?;
        for b in &f.blocks {
            write_f64s(w, &b.values)?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<GpModel, ArtifactError> {
    expect_magic(r, MAGIC_MODEL)?;
    let n = read_len(r, 1 << 20, "N")?;
    let l = read_len(r, 1 << 16, "L")?;
    let blocks = read_len(r, 1 << 16, "blocks")?;
    let scalars = read_len(r, 1 << 16, "scalars")?;
    if blocks + scalars != l || n < 2 {
        return Err(malformed(format!("inconsistent sizes N={n} L={l} blocks={blocks} scalars={scalars}")));
    }
    let ranges = read_f64s(r, l)?;
    let nugget = r.read_f64::<LE>()?;
    let theta = r.read_f64::<LE>()?;
    let sigma2 = r.read_f64::<LE>()?;
    let log_posterior = r.read_f64::<LE>()?;
    let mapping = read_str(r)?;
    if mapping != RANGE_MAPPING {
        return Err(ArtifactError::Mismatch(format!("range mapping `{mapping}`")));
    }
    let fingerprints = (0..blocks).map(|_| read_fingerprint(r)).collect::<Result<Vec<_>, _>>()?;
    let mut chol_lower = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            chol_lower[(i, j)] = r.read_f64::<LE>()?;
        }
    }
    let rinv_h = DVector::from_vec(read_f64s(r, n)?);
    let rinv_resid = DVector::from_vec(read_f64s(r, n)?);
    let targets = read_f64s(r, n)?;
    let mut train = Vec::with_capacity(n);
    for _ in 0..n {
        let id = read_str(r)?;
        let sc = read_f64s(r, scalars)?;
        let bl = fingerprints
            .iter()
            .map(|fp| {
                Ok(PqEmbedding {
                    values: read_f64s(r, fp.projections * fp.quantiles)?,
                    fingerprint: fp.clone(),
                    graph_id: id.clone(),
                })
            })
            .collect::<Result<Vec<_>, ArtifactError>>()?;
        train.push(GraphFeatures { id, blocks: bl, scalars: sc });
    }
    let train_distances = pairwise_distances(&train).map_err(GpError::from)?;
    Ok(GpModel {
        hyper: GpHyperParams { ranges, nugget, theta, sigma2 },
        log_posterior,
        train,
        targets,
        train_distances,
        chol_lower,
        rinv_h,
        rinv_resid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sw::{pq_embed, sample_projections, EmpiricalMeasure, QuantileGrid};

    fn embedding(seed: u64) -> PqEmbedding {
        let x = DMatrix::from_fn(6, 2, |i, j| (i * 7 + j * 3) as f64 * 0.1);
        let proj = sample_projections(seed, 3, 2).unwrap();
        let mut e = pq_embed(EmpiricalMeasure::new(&x).unwrap(), &proj, &QuantileGrid::new(4).unwrap(), 2.0, "g-1").unwrap();
        e.fingerprint.iterations = vec![0];
        e
    }

    #[test]
    fn pq_cache_roundtrip_and_magic() {
        let e = embedding(3);
        let mut buf = Vec::new();
        write_pq(&mut buf, &e).unwrap();
        assert_eq!(&buf[..8], MAGIC_PQ);
        assert_eq!(read_pq(&mut buf.as_slice()).unwrap(), e);

        let mut wrong = buf.clone();
        wrong[5] = b'X';
        assert!(matches!(read_pq(&mut wrong.as_slice()), Err(ArtifactError::BadMagic { .. })));
        assert!(read_pq(&mut &buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn mixed_caches_are_refused() {
        let a = GraphFeatures { id: "a".into(), blocks: vec![embedding(1)], scalars: vec![] };
        let b = GraphFeatures { id: "b".into(), blocks: vec![embedding(2)], scalars: vec![] };
        assert!(check_feature_set(&[a.clone(), a.clone()]).is_ok());
        assert!(matches!(check_feature_set(&[a, b]), Err(ArtifactError::Mismatch(_))));
    }

    #[test]
    fn gram_text_is_exact() {
        let values = DMatrix::from_row_slice(2, 2, &[1.0, 0.1 + 0.2, 0.1 + 0.2, 1.0 / 3.0]);
        let g = GramMatrix {
            values: values.clone(),
            row_ids: vec!["a".into(), "b".into()],
            fingerprint: GramFingerprint {
                features: embedding(0).fingerprint,
                blocks: 1,
                kernel: Some(KernelConfig::default()),
            },
        };
        let mut buf = Vec::new();
        write_gram_text(&mut buf, &g).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("2 0 3 4 1 0 2 linear 1 0 -\n"), "{text}");
        let back = read_gram_text(buf.as_slice()).unwrap();
        assert_eq!(back.values, values);
        let h = parse_gram_text_header(&back.header).unwrap();
        assert_eq!((h.n, h.seed, h.projections, h.quantiles, h.gamma), (2, 0, 3, 4, Some(vec![1.0])));

        let mut bin = Vec::new();
        write_gram_binary(&mut bin, &g).unwrap();
        assert_eq!(read_gram_binary(&mut bin.as_slice()).unwrap(), g);
    }
}
