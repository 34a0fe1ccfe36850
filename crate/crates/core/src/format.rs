//! On-disk formats: model files (JSON with a parameter checksum), bound
//! tables (binary), and prototype sets (text).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{AttitudeShiftBounds, BoundConfig, BoundTables, MeanChangeBounds, MeanChangeMethod};
use crate::error::{Error, Result};
use crate::mcvq::{McvqModel, McvqParams};
use crate::naive_bayes::{NaiveBayesModel, NaiveBayesParams};
use crate::prototypes::PrototypeSet;

pub const MODEL_FORMAT: &str = "acf-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mcvq,
    NaiveBayes,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcvq" => Ok(Self::Mcvq),
            "naive_bayes" | "nb" => Ok(Self::NaiveBayes),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mcvq => "mcvq",
            Self::NaiveBayes => "naive_bayes",
        })
    }
}

/// Either model kind, as read from a model file.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Mcvq(McvqModel),
    NaiveBayes(NaiveBayesModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Mcvq(_) => ModelKind::Mcvq,
            Self::NaiveBayes(_) => ModelKind::NaiveBayes,
        }
    }

    pub fn n_items(&self) -> usize {
        match self {
            Self::Mcvq(m) => m.n_items(),
            Self::NaiveBayes(m) => m.params().n_items,
        }
    }

    pub fn rho(&self) -> usize {
        match self {
            Self::Mcvq(m) => m.rho(),
            Self::NaiveBayes(m) => m.params().rho,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
enum Params {
    Mcvq(McvqParams),
    NaiveBayes(NaiveBayesParams),
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    checksum: String,
    #[serde(flatten)]
    params: Params,
}

fn hash_usizes(h: &mut Sha256, xs: &[usize]) {
    for &x in xs {
        h.update((x as u64).to_le_bytes());
    }
}

fn hash_f64s(h: &mut Sha256, xs: &[f64]) {
    for &x in xs {
        h.update(x.to_bits().to_le_bytes());
    }
}

fn params_checksum(p: &Params) -> String {
    let mut h = Sha256::new();
    match p {
        Params::Mcvq(p) => {
            h.update(b"mcvq");
            hash_usizes(&mut h, &[p.n_items, p.n_types, p.n_attitudes, p.rho]);
            for a in [&p.type_dist, &p.attitude_prior, &p.rating_mean, &p.rating_var] {
                hash_f64s(&mut h, a);
            }
        }
        Params::NaiveBayes(p) => {
            h.update(b"naive_bayes");
            hash_usizes(&mut h, &[p.n_items, p.n_components, p.rho]);
            hash_f64s(&mut h, &p.mixing);
            hash_f64s(&mut h, &p.rating_multinomial);
        }
    }
    hex::encode(h.finalize())
}

pub fn model_to_string(model: &AnyModel) -> Result<String> {
    let params = match model {
        AnyModel::Mcvq(m) => Params::Mcvq(m.params().clone()),
        AnyModel::NaiveBayes(m) => Params::NaiveBayes(m.params().clone()),
    };
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        checksum: params_checksum(&params),
        params,
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn model_from_str(text: &str) -> Result<AnyModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Format(format!("not a model file (format {:?})", file.format)));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model file version {}", file.version)));
    }
    if params_checksum(&file.params) != file.checksum {
        return Err(Error::Checksum("model"));
    }
    Ok(match file.params {
        Params::Mcvq(p) => AnyModel::Mcvq(McvqModel::new(p)?),
        Params::NaiveBayes(p) => AnyModel::NaiveBayes(NaiveBayesModel::new(p)?),
    })
}

pub fn save_model(model: &AnyModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_string(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AnyModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}

pub const BOUNDS_MAGIC: &[u8; 8] = b"ACFBOUND";
pub const BOUNDS_VERSION: u32 = 1;

/// Binary layout, little-endian throughout:
///
/// ```text
/// magic "ACFBOUND" | version u32 | M u64 | rho u64 | K u64 | L u64
/// | tighten u8 | method u8 (0 = lp, 1 = iterative)
/// | shift f64 x (M*rho*K*L) | mean_change f64 x (M*M*rho)
/// | sha256 of everything above (32 bytes)
/// ```
pub fn bounds_to_bytes(t: &BoundTables) -> Vec<u8> {
    let s = &t.shift;
    let mut buf = Vec::with_capacity(64 + 8 * (s.data.len() + t.mean_change.data.len()));
    buf.extend_from_slice(BOUNDS_MAGIC);
    buf.extend_from_slice(&BOUNDS_VERSION.to_le_bytes());
    for x in [s.n_items, s.rho, s.n_types, s.n_attitudes] {
        buf.extend_from_slice(&(x as u64).to_le_bytes());
    }
    buf.push(t.config.tighten as u8);
    buf.push(match t.config.method {
        MeanChangeMethod::Lp => 0,
        MeanChangeMethod::Iterative => 1,
    });
    for x in s.data.iter().chain(&t.mean_change.data) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("bound table file is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Format("dimension overflows usize".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("table too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn bounds_from_bytes(bytes: &[u8]) -> Result<BoundTables> {
    if bytes.len() < 8 + 4 + 32 || &bytes[..8] != BOUNDS_MAGIC {
        return Err(Error::Format("not a bound table file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum("bound tables"));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != BOUNDS_VERSION {
        return Err(Error::Format(format!("unsupported bound table version {version}")));
    }
    let (m, rho, kk, ll) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
    let flags = r.take(2)?;
    let method = match flags[1] {
        0 => MeanChangeMethod::Lp,
        1 => MeanChangeMethod::Iterative,
        other => return Err(Error::Format(format!("unknown mean-change method tag {other}"))),
    };
    let n_shift = m
        .checked_mul(rho)
        .and_then(|x| x.checked_mul(kk))
        .and_then(|x| x.checked_mul(ll))
        .ok_or_else(|| Error::Format("table too large".into()))?;
    let n_mean = m.checked_mul(m).and_then(|x| x.checked_mul(rho)).ok_or_else(|| Error::Format("table too large".into()))?;
    let shift = r.f64s(n_shift)?;
    let mean_change = r.f64s(n_mean)?;
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in bound table file".into()));
    }
    Ok(BoundTables {
        config: BoundConfig { tighten: flags[0] != 0, method, ..BoundConfig::default() },
        shift: AttitudeShiftBounds { n_items: m, rho, n_types: kk, n_attitudes: ll, data: shift },
        mean_change: MeanChangeBounds { n_items: m, rho, data: mean_change },
    })
}

pub fn save_bounds(t: &BoundTables, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, bounds_to_bytes(t))?;
    Ok(())
}

pub fn load_bounds(path: impl AsRef<Path>) -> Result<BoundTables> {
    bounds_from_bytes(&std::fs::read(path)?)
}

pub const PROTOTYPES_HEADER: &str = "# acf-prototypes v1";

/// Text layout:
///
/// ```text
/// # acf-prototypes v1
/// beta <f64>
/// epsilon <f64>
/// items <M>
/// members <n>
/// <item index> <popularity>     (one line per member, in selection order)
/// popularity <c_0> <c_1> ... <c_{M-1}>
/// ```
///
/// Floats are written with shortest round-trip formatting.
pub fn prototypes_to_string(p: &PrototypeSet) -> String {
    let mut s = String::new();
    s.push_str(PROTOTYPES_HEADER);
    s.push('\n');
    s.push_str(&format!("beta {:?}\nepsilon {:?}\nitems {}\nmembers {}\n", p.beta, p.epsilon, p.n_items(), p.members.len()));
    for &j in &p.members {
        s.push_str(&format!("{} {}\n", j, p.popularity[j]));
    }
    s.push_str("popularity");
    for c in &p.popularity {
        s.push_str(&format!(" {c}"));
    }
    s.push('\n');
    s
}

pub fn prototypes_from_str(text: &str) -> Result<PrototypeSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = |what: &str| -> Result<(usize, Vec<&str>)> {
        let (i, l) = lines.next().ok_or_else(|| Error::Format(format!("prototype file ends before {what}")))?;
        Ok((i + 1, l.split_whitespace().collect()))
    };
    let bad = |line: usize, msg: &str| Error::Parse { line: line as u64, message: msg.to_string() };
    let (line, header) = next("header")?;
    if header.join(" ") != PROTOTYPES_HEADER {
        return Err(bad(line, "missing prototype file header"));
    }
    let mut field = |name: &str| -> Result<(usize, String)> {
        let (line, toks) = next(name)?;
        if toks.len() != 2 || toks[0] != name {
            return Err(bad(line, &format!("expected `{name} <value>`")));
        }
        Ok((line, toks[1].to_string()))
    };
    let (l, beta) = field("beta")?;
    let beta: f64 = beta.parse().map_err(|_| bad(l, "beta is not a number"))?;
    let (l, epsilon) = field("epsilon")?;
    let epsilon: f64 = epsilon.parse().map_err(|_| bad(l, "epsilon is not a number"))?;
    let (l, m) = field("items")?;
    let m: usize = m.parse().map_err(|_| bad(l, "items is not a count"))?;
    let (l, n) = field("members")?;
    let n: usize = n.parse().map_err(|_| bad(l, "members is not a count"))?;
    let mut members = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, toks) = next("member line")?;
        let j: usize = toks.first().and_then(|t| t.parse().ok()).ok_or_else(|| bad(line, "bad member index"))?;
        if j >= m {
            return Err(bad(line, "member index out of range"));
        }
        members.push(j);
    }
    let (line, toks) = next("popularity")?;
    if toks.first() != Some(&"popularity") || toks.len() != m + 1 {
        return Err(bad(line, "expected `popularity` followed by one count per item"));
    }
    let popularity = toks[1..]
        .iter()
        .map(|t| t.parse().map_err(|_| bad(line, "bad popularity count")))
        .collect::<Result<Vec<usize>>>()?;
    Ok(PrototypeSet { members, beta, epsilon, popularity })
}

pub fn save_prototypes(p: &PrototypeSet, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(prototypes_to_string(p).as_bytes())?;
    Ok(())
}

pub fn load_prototypes(path: impl AsRef<Path>) -> Result<PrototypeSet> {
    prototypes_from_str(&std::fs::read_to_string(path)?)
}
