//! Versioned text checkpoints.
//!
//! Line one is `laddergym-ckpt v1 <layout-hash>`; every following line holds
//! one tensor as `name ndims dims... values...` with values printed at 17
//! significant digits so the round trip is bit exact. Optimizer moments,
//! iteration counters and role tags ride along as ordinary named tensors.

use crate::nn::policy::layout_hash;
use crate::nn::{Adam, Arena};
use std::fmt::Write as _;
use std::path::Path;

/// What produced a checkpoint. A teacher checkpoint may enter student
/// training only as the distillation source, never as the student weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Teacher,
    Student,
}

impl Role {
    fn tag(self) -> f64 {
        match self {
            Role::Teacher => 0.0,
            Role::Student => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
        }
    }
}

#[derive(Debug)]
pub enum CkptError {
    Io { path: String, err: std::io::Error },
    Parse { offset: usize, what: String },
    Version { found: String },
    Layout { file: u64, expected: u64 },
    Shape { name: String, file: Vec<usize>, expected: Vec<usize> },
    Missing { name: String },
    Role { found: String, wanted: String },
}

impl std::fmt::Display for CkptError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CkptError::Io { path, err } => write!(f, "{path}: {err}"),
            CkptError::Parse { offset, what } => {
                write!(f, "checkpoint parse error at byte {offset}: {what}")
            }
            CkptError::Version { found } => {
                write!(f, "unsupported checkpoint header {found:?}, expected laddergym-ckpt v1")
            }
            CkptError::Layout { file, expected } => write!(
                f,
                "checkpoint layout {file:016x} does not match this network {expected:016x}"
            ),
            CkptError::Shape { name, file, expected } => {
                write!(f, "tensor {name}: file dims {file:?}, expected {expected:?}")
            }
            CkptError::Missing { name } => write!(f, "tensor {name} missing from checkpoint"),
            CkptError::Role { found, wanted } => {
                write!(f, "checkpoint holds {found} weights, wanted {wanted}")
            }
        }
    }
}

impl std::error::Error for CkptError {}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub layout: u64,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    /// Snapshot every tensor of an arena under the layout hash covering the
    /// observation wiring plus the arena shape.
    pub fn from_arena(arena: &Arena, role: Role) -> Checkpoint {
        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = arena
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.dims.clone(), arena.w[t.span.clone()].to_vec()))
            .collect();
        tensors.push(("meta.role".into(), vec![1], vec![role.tag()]));
        Checkpoint { layout: layout_hash(arena), tensors }
    }

    /// Append an auxiliary tensor (optimizer state, counters, curricula).
    pub fn push(&mut self, name: &str, dims: &[usize], values: &[f64]) {
        assert!(!name.contains(char::is_whitespace), "tensor names carry no spaces");
        assert_eq!(dims.iter().product::<usize>(), values.len());
        self.tensors.push((name.into(), dims.to_vec(), values.to_vec()));
    }

    pub fn push_adam(&mut self, adam: &Adam) {
        self.push("opt.m", &[adam.m.len()], &adam.m);
        self.push("opt.v", &[adam.v.len()], &adam.v);
        self.push("opt.step", &[1], &[adam.t as f64]);
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, d, v)| (d.as_slice(), v.as_slice()))
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.tensor(name).and_then(|(_, v)| v.first().copied())
    }

    pub fn role(&self) -> Option<Role> {
        match self.scalar("meta.role") {
            Some(t) if t == 0.0 => Some(Role::Teacher),
            Some(t) if t == 1.0 => Some(Role::Student),
            _ => None,
        }
    }

    /// Refuse checkpoints whose role tag differs from `wanted`.
    pub fn require_role(&self, wanted: Role) -> Result<(), CkptError> {
        let found = self.role();
        if found == Some(wanted) {
            return Ok(());
        }
        Err(CkptError::Role {
            found: found.map_or("untagged".into(), |r| r.name().into()),
            wanted: wanted.name().into(),
        })
    }

    /// Copy the checkpoint's weights into `arena`. Every arena tensor must
    /// be present with matching dims, and the layout hashes must agree;
    /// auxiliary tensors in the file are left for the caller.
    pub fn apply_to(&self, arena: &mut Arena) -> Result<(), CkptError> {
        let expected = layout_hash(arena);
        if self.layout != expected {
            return Err(CkptError::Layout { file: self.layout, expected });
        }
        for info in arena.tensors.clone() {
            let (dims, vals) = self
                .tensor(&info.name)
                .ok_or_else(|| CkptError::Missing { name: info.name.clone() })?;
            if dims != info.dims {
                return Err(CkptError::Shape {
                    name: info.name.clone(),
                    file: dims.to_vec(),
                    expected: info.dims.clone(),
                });
            }
            arena.w[info.span.clone()].copy_from_slice(vals);
        }
        Ok(())
    }

    /// Rebuild Adam moments saved by `push_adam`.
    pub fn extract_adam(&self, n_params: usize) -> Result<Adam, CkptError> {
        let mut adam = Adam::new(n_params);
        let (md, m) = self.tensor("opt.m").ok_or(CkptError::Missing { name: "opt.m".into() })?;
        let (vd, v) = self.tensor("opt.v").ok_or(CkptError::Missing { name: "opt.v".into() })?;
        if md != [n_params] || vd != [n_params] {
            return Err(CkptError::Shape {
                name: "opt.m".into(),
                file: md.to_vec(),
                expected: vec![n_params],
            });
        }
        adam.m.copy_from_slice(m);
        adam.v.copy_from_slice(v);
        adam.t = self.scalar("opt.step").unwrap_or(0.0) as u64;
        Ok(adam)
    }

    pub fn save(&self, path: &Path) -> Result<(), CkptError> {
        let cap: usize = self.tensors.iter().map(|(n, d, v)| n.len() + 8 * d.len() + 26 * v.len()).sum();
        let mut out = String::with_capacity(cap + 64);
        let _ = writeln!(out, "laddergym-ckpt v1 {:016x}", self.layout);
        for (name, dims, vals) in &self.tensors {
            out.push_str(name);
            let _ = write!(out, " {}", dims.len());
            for d in dims {
                let _ = write!(out, " {d}");
            }
            for v in vals {
                let _ = write!(out, " {v:.16e}");
            }
            out.push('\n');
        }
        std::fs::write(path, out)
            .map_err(|err| CkptError::Io { path: path.display().to_string(), err })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CkptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| CkptError::Io { path: path.display().to_string(), err })?;
        Checkpoint::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Checkpoint, CkptError> {
        let mut toks = Tokens::new(text);

        let (off, magic) = toks.expect("header magic")?;
        if magic != "laddergym-ckpt" {
            return Err(CkptError::Parse { offset: off, what: format!("bad magic {magic:?}") });
        }
        let (_, version) = toks.expect("schema version")?;
        if version != "v1" {
            return Err(CkptError::Version { found: format!("laddergym-ckpt {version}") });
        }
        let (off, hash) = toks.expect("layout hash")?;
        let layout = u64::from_str_radix(hash, 16)
            .map_err(|_| CkptError::Parse { offset: off, what: format!("bad layout hash {hash:?}") })?;

        let mut tensors = Vec::new();
        while let Some((off, name)) = toks.next() {
            if name.as_bytes()[0].is_ascii_digit() || name.starts_with('-') {
                return Err(CkptError::Parse {
                    offset: off,
                    what: format!("expected tensor name, found {name:?}"),
                });
            }
            let ndims = toks.usize("dimension count")?;
            if ndims > 8 {
                return Err(CkptError::Parse {
                    offset: off,
                    what: format!("tensor {name} claims {ndims} dims"),
                });
            }
            let mut dims = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                dims.push(toks.usize("dimension")?);
            }
            let count: usize = dims.iter().product();
            let mut vals = Vec::with_capacity(count);
            for _ in 0..count {
                vals.push(toks.f64("value")?);
            }
            tensors.push((name.to_string(), dims, vals));
        }
        Ok(Checkpoint { layout, tensors })
    }
}

/// Whitespace tokenizer that remembers byte offsets for error reporting.
struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Tokens { text, pos: 0 }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < bytes.len() && !bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some((start, &self.text[start..self.pos]))
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), CkptError> {
        self.next().ok_or_else(|| CkptError::Parse {
            offset: self.pos,
            what: format!("unexpected end of file, expected {what}"),
        })
    }

    fn usize(&mut self, what: &str) -> Result<usize, CkptError> {
        let (off, tok) = self.expect(what)?;
        tok.parse().map_err(|_| CkptError::Parse {
            offset: off,
            what: format!("expected {what}, found {tok:?}"),
        })
    }

    fn f64(&mut self, what: &str) -> Result<f64, CkptError> {
        let (off, tok) = self.expect(what)?;
        tok.parse().map_err(|_| CkptError::Parse {
            offset: off,
            what: format!("expected {what}, found {tok:?}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::policy::{PolicyNet, PolicySpec};
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn small_net(seed: u64) -> (Arena, PolicyNet) {
        let mut a = Arena::new();
        let mut r = rng::root(seed);
        let net = PolicyNet::new(&mut a, "p", PolicySpec::toy(3, 2, &[8, 8]), &mut r);
        (a, net)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (mut arena, _) = small_net(50);
        let mut r = rng::root(51);
        for w in arena.w.iter_mut() {
            *w = r.gen_range(-3.0..3.0) * 10f64.powi(r.gen_range(-300..300));
        }
        arena.w[0] = -0.0;
        arena.w[1] = f64::MIN_POSITIVE / 8.0;
        arena.w[2] = 1.0 + f64::EPSILON;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let ck = Checkpoint::from_arena(&arena, Role::Teacher);
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ck);

        let (mut arena2, _) = small_net(52);
        assert_ne!(arena.w, arena2.w);
        loaded.apply_to(&mut arena2).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&arena.w), bits(&arena2.w), "every weight restored to the bit");
    }

    #[test]
    fn adam_moments_survive_the_trip() {
        let (arena, _) = small_net(53);
        let mut adam = Adam::new(arena.len());
        adam.m[3] = 0.125;
        adam.v[7] = 1e-9;
        adam.t = 41;
        let mut ck = Checkpoint::from_arena(&arena, Role::Student);
        ck.push_adam(&adam);
        ck.push("meta.iter", &[1], &[17.0]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let restored = loaded.extract_adam(arena.len()).unwrap();
        assert_eq!(restored, adam);
        assert_eq!(loaded.scalar("meta.iter"), Some(17.0));
        assert_eq!(loaded.role(), Some(Role::Student));
    }

    #[test]
    fn tampered_version_is_refused() {
        let (arena, _) = small_net(54);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ckpt");
        Checkpoint::from_arena(&arena, Role::Teacher).save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replace("v1", "v2");
        std::fs::write(&path, text).unwrap();
        match Checkpoint::load(&path) {
            Err(CkptError::Version { found }) => assert!(found.contains("v2")),
            other => panic!("expected a version refusal, got {other:?}"),
        }
    }

    #[test]
    fn corruption_reports_the_byte_offset() {
        let (arena, _) = small_net(55);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        Checkpoint::from_arena(&arena, Role::Teacher).save(&path).unwrap();
        let pristine = std::fs::read_to_string(&path).unwrap();
        let mut text = pristine.clone();

        // Replace the first value of the first tensor with garbage.
        let header_end = text.find('\n').unwrap() + 1;
        let line = &text[header_end..];
        let mut it = line.split_whitespace();
        let name = it.next().unwrap();
        let ndims: usize = it.next().unwrap().parse().unwrap();
        let mut skip = name.len();
        // Walk forward over ndims+1 integer tokens to the first value.
        let mut seen = 0;
        let bytes = line.as_bytes();
        while seen < ndims + 1 {
            while bytes[skip].is_ascii_whitespace() {
                skip += 1;
            }
            while !bytes[skip].is_ascii_whitespace() {
                skip += 1;
            }
            seen += 1;
        }
        while bytes[skip].is_ascii_whitespace() {
            skip += 1;
        }
        let corrupt_at = header_end + skip;
        text.replace_range(corrupt_at..corrupt_at + 3, "x#!");
        std::fs::write(&path, &text).unwrap();

        match Checkpoint::load(&path) {
            Err(CkptError::Parse { offset, what }) => {
                assert_eq!(offset, corrupt_at, "offset points at the bad token: {what}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }

        // Truncation mid-stream is also a parse error, located within the cut.
        let cut = &pristine[..pristine.len() / 2];
        match Checkpoint::parse(cut) {
            Err(CkptError::Parse { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("expected truncation to fail, got {other:?}"),
        }
    }

    #[test]
    fn wrong_layout_and_wrong_role_are_refused() {
        let (arena, _) = small_net(56);
        let ck = Checkpoint::from_arena(&arena, Role::Teacher);

        // A differently shaped network refuses the file, naming both hashes.
        let mut other = Arena::new();
        let mut r = rng::root(57);
        let _ = PolicyNet::new(&mut other, "p", PolicySpec::toy(3, 2, &[8, 4]), &mut r);
        match ck.apply_to(&mut other) {
            Err(CkptError::Layout { file, expected }) => {
                assert_eq!(file, ck.layout);
                assert_ne!(file, expected);
            }
            other => panic!("expected a layout refusal, got {other:?}"),
        }

        assert!(ck.require_role(Role::Teacher).is_ok());
        match ck.require_role(Role::Student) {
            Err(CkptError::Role { found, wanted }) => {
                assert_eq!((found.as_str(), wanted.as_str()), ("teacher", "student"));
            }
            other => panic!("expected a role refusal, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn any_finite_tensor_round_trips(vals in proptest::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
            1..40,
        )) {
            let mut ck = Checkpoint { layout: 0xabc, tensors: Vec::new() };
            ck.push("t.w", &[vals.len()], &vals);
            let text = {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("p.ckpt");
                ck.save(&path).unwrap();
                std::fs::read_to_string(&path).unwrap()
            };
            let loaded = Checkpoint::parse(&text).unwrap();
            let (_, got) = loaded.tensor("t.w").unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(got), bits(&vals));
        }
    }
}
