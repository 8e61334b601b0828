//! Closure of operator sets over small function spaces, plus the table
//! counting and 2-bit footnote-condition checks that go with it.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::hash::Hash;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use num_bigint::BigUint;
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::expr::EXHAUSTIVE_INPUT_BITS;
use crate::optable::{decode_tuple, OpSet, Width};

/// Full output table of a `vars`-variable function. Entry `i` is the value at
/// the assignment whose variable `j` is `(i >> (w*j)) & mask`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FunctionVector {
    width: Width,
    vars: usize,
    outputs: Vec<u32>,
}

impl FunctionVector {
    pub fn len_for(width: Width, vars: usize) -> Result<usize> {
        let bits = width.bits() as usize * vars;
        if bits > EXHAUSTIVE_INPUT_BITS as usize {
            return Err(Error::usage(format!(
                "function space of {vars} variables at width {width} is too large"
            )));
        }
        Ok(1 << bits)
    }

    pub fn new(width: Width, vars: usize, outputs: Vec<u32>) -> Result<Self> {
        let len = Self::len_for(width, vars)?;
        if outputs.len() != len {
            return Err(Error::usage(format!(
                "function vector needs {len} entries, got {}",
                outputs.len()
            )));
        }
        if let Some(v) = outputs.iter().find(|&&v| u64::from(v) > width.mask()) {
            return Err(Error::usage(format!("entry {v} out of range for width {width}")));
        }
        Ok(FunctionVector {
            width,
            vars,
            outputs,
        })
    }

    pub fn projection(width: Width, vars: usize, j: usize) -> Result<Self> {
        if j >= vars {
            return Err(Error::usage(format!("projection {j} of {vars} variables")));
        }
        let len = Self::len_for(width, vars)?;
        let outputs = (0..len as u64)
            .map(|i| ((i >> (width.bits() as usize * j)) & width.mask()) as u32)
            .collect();
        Ok(FunctionVector {
            width,
            vars,
            outputs,
        })
    }

    pub fn constant(width: Width, vars: usize, value: u64) -> Result<Self> {
        let len = Self::len_for(width, vars)?;
        FunctionVector::new(width, vars, vec![width.reduce(value) as u32; len])
    }

    pub fn width(&self) -> Width {
        self.width
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn outputs(&self) -> &[u32] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn constant_value(&self) -> Option<u32> {
        let first = self.outputs[0];
        self.outputs.iter().all(|&v| v == first).then_some(first)
    }

    pub fn decode_assignment_into(width: Width, index: u64, out: &mut [u64]) {
        for (j, v) in out.iter_mut().enumerate() {
            *v = (index >> (width.bits() as usize * j)) & width.mask();
        }
    }

    pub fn assignment(&self, index: usize) -> Vec<u64> {
        let mut out = vec![0; self.vars];
        Self::decode_assignment_into(self.width, index as u64, &mut out);
        out
    }

    /// Entry `i` occupies bits `w*i .. w*(i+1)`. For w = 2, k = 2 this fits in 32 bits.
    pub fn code(&self) -> BigUint {
        let mut bytes_le = Vec::new();
        let mut acc: u64 = 0;
        let mut filled = 0u32;
        for &v in &self.outputs {
            acc |= u64::from(v) << filled;
            filled += self.width.bits();
            while filled >= 8 {
                bytes_le.push(acc as u8);
                acc >>= 8;
                filled -= 8;
            }
        }
        if filled > 0 {
            bytes_le.push(acc as u8);
        }
        BigUint::from_bytes_le(&bytes_le)
    }

    pub fn from_code(width: Width, vars: usize, code: &BigUint) -> Result<Self> {
        let len = Self::len_for(width, vars)?;
        let total_bits = len as u64 * u64::from(width.bits());
        if code.bits() > total_bits {
            return Err(Error::usage(format!("code {code} exceeds {total_bits} bits")));
        }
        let outputs = (0..len as u64)
            .map(|i| {
                (0..width.bits()).fold(0u32, |acc, b| {
                    acc | (u32::from(code.bit(i * u64::from(width.bits()) + u64::from(b))) << b)
                })
            })
            .collect();
        FunctionVector::new(width, vars, outputs)
    }

    /// Order of [`FunctionVector::code`], for vectors of the same shape.
    pub fn cmp_code(&self, other: &Self) -> Ordering {
        self.outputs.iter().rev().cmp(other.outputs.iter().rev())
    }
}

impl fmt::Display for FunctionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Starting functions for a closure run. The default uses the projections alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SeedSet {
    #[default]
    Projections,
    ProjectionsAndZero,
    ProjectionsAndOne,
    ProjectionsAndConstants,
}

impl SeedSet {
    pub const ALL: [SeedSet; 4] = [
        SeedSet::Projections,
        SeedSet::ProjectionsAndZero,
        SeedSet::ProjectionsAndOne,
        SeedSet::ProjectionsAndConstants,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SeedSet::Projections => "projections",
            SeedSet::ProjectionsAndZero => "projections+zero",
            SeedSet::ProjectionsAndOne => "projections+one",
            SeedSet::ProjectionsAndConstants => "projections+constants",
        }
    }

    pub fn functions(self, width: Width, vars: usize) -> Result<Vec<FunctionVector>> {
        let mut seeds = (0..vars)
            .map(|j| FunctionVector::projection(width, vars, j))
            .collect::<Result<Vec<_>>>()?;
        let constants: Vec<u64> = match self {
            SeedSet::Projections => vec![],
            SeedSet::ProjectionsAndZero => vec![0],
            SeedSet::ProjectionsAndOne => vec![1],
            SeedSet::ProjectionsAndConstants => (0..width.modulus()).collect(),
        };
        for c in constants {
            seeds.push(FunctionVector::constant(width, vars, c)?);
        }
        Ok(seeds)
    }
}

impl FromStr for SeedSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SeedSet::ALL
            .into_iter()
            .find(|seed| seed.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown closure seed `{s}`")))
    }
}

impl fmt::Display for SeedSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for SeedSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClosureLimits {
    pub max_members: usize,
}

impl Default for ClosureLimits {
    fn default() -> Self {
        ClosureLimits {
            max_members: 1 << 22,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClosureResult {
    pub generators: Vec<String>,
    pub seed: SeedSet,
    pub width: Width,
    pub vars: usize,
    /// Sorted by code.
    pub members: Vec<FunctionVector>,
    pub iterations: usize,
    pub contains_constant: bool,
    /// False when the member bound stopped the run; the partial count is not a closure.
    pub complete: bool,
}

impl ClosureResult {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn summary(&self) -> ClosureSummary {
        ClosureSummary {
            generators: self.generators.clone(),
            seed: self.seed,
            width: self.width.bits(),
            vars: self.vars,
            size: self.size(),
            iterations: self.iterations,
            contains_constant: self.contains_constant,
            complete: self.complete,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClosureSummary {
    pub generators: Vec<String>,
    pub seed: SeedSet,
    pub width: u32,
    pub vars: usize,
    pub size: usize,
    pub iterations: usize,
    pub contains_constant: bool,
    pub complete: bool,
}

/// Largest `width * arity` for which generator lookup tables are built.
const MAX_LUT_BITS: u32 = 24;

struct Generator {
    arity: usize,
    lut: Vec<u8>,
    /// Arity 3 only: distinct partial applications `f(a, b, .)` seen so far.
    sig_index: FxHashSet<Box<[u8]>>,
    sigs: Vec<Box<[u8]>>,
    sigs_done: usize,
}

/// Hash key for a byte-lane vector. Vectors of at most 64 bits pack into a `u64`.
trait Key: Clone + Eq + Hash + Ord + Send + Sync {
    fn pack(lanes: &[u8], w: u32) -> Self;
    fn unpack(&self, w: u32, len: usize) -> Box<[u8]>;
    fn probe(set: &FxHashSet<Self>, lanes: &[u8], w: u32) -> bool;
}

impl Key for u64 {
    #[inline]
    fn pack(lanes: &[u8], w: u32) -> Self {
        lanes
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &v)| acc | (u64::from(v) << (w as usize * i)))
    }

    fn unpack(&self, w: u32, len: usize) -> Box<[u8]> {
        let mask = (1u64 << w) - 1;
        (0..len).map(|i| ((self >> (w as usize * i)) & mask) as u8).collect()
    }

    #[inline]
    fn probe(set: &FxHashSet<Self>, lanes: &[u8], w: u32) -> bool {
        set.contains(&Self::pack(lanes, w))
    }
}

impl Key for Box<[u8]> {
    fn pack(lanes: &[u8], _: u32) -> Self {
        lanes.into()
    }

    fn unpack(&self, _: u32, _: usize) -> Box<[u8]> {
        self.clone()
    }

    #[inline]
    fn probe(set: &FxHashSet<Self>, lanes: &[u8], _: u32) -> bool {
        set.contains(lanes)
    }
}

/// Semi-naive fixpoint engine over byte-lane vectors.
struct Closer<K> {
    width: u32,
    len: usize,
    generators: Vec<Generator>,
    members: Vec<Box<[u8]>>,
    index: FxHashSet<K>,
}

fn merge<T: Eq + Hash>(mut a: FxHashSet<T>, mut b: FxHashSet<T>) -> FxHashSet<T> {
    if a.len() < b.len() {
        std::mem::swap(&mut a, &mut b);
    }
    a.extend(b);
    a
}

/// Records `lanes` in `acc` unless already known.
#[inline]
fn note<K: Key>(acc: &mut FxHashSet<K>, index: &FxHashSet<K>, lanes: &[u8], w: u32) {
    if !K::probe(index, lanes, w) && !K::probe(acc, lanes, w) {
        acc.insert(K::pack(lanes, w));
    }
}

impl<K: Key> Closer<K> {
    fn new(ops: &OpSet, vars: usize) -> Result<Self> {
        let width = ops.width();
        if width.bits() > 8 {
            return Err(Error::usage("closure supports widths up to 8"));
        }
        let len = FunctionVector::len_for(width, vars)?;
        let generators = ops
            .iter()
            .map(|op| {
                let bits = width.bits() * op.arity() as u32;
                if bits > MAX_LUT_BITS {
                    return Err(Error::usage(format!(
                        "generator {op} is too wide for closure"
                    )));
                }
                let lut = (0..1u64 << bits)
                    .map(|i| op.apply(&decode_tuple(width, op.arity(), i)) as u8)
                    .collect();
                Ok(Generator {
                    arity: op.arity(),
                    lut,
                    sig_index: FxHashSet::default(),
                    sigs: Vec::new(),
                    sigs_done: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Closer {
            width: width.bits(),
            len,
            generators,
            members: Vec::new(),
            index: FxHashSet::default(),
        })
    }

    fn insert(&mut self, key: K) {
        if !self.index.contains(&key) {
            self.members.push(key.unpack(self.width, self.len));
            self.index.insert(key);
        }
    }

    /// Every generator result not already a member, over argument tuples that
    /// involve at least one member at position `>= done`.
    fn round(&mut self, done: usize) -> FxHashSet<K> {
        let n = self.members.len();
        let (w, len) = (self.width, self.len);
        let members = &self.members;
        let index = &self.index;
        let fresh = |b_or_all: usize| if b_or_all < done { done..n } else { 0..n };
        let mut found = FxHashSet::default();

        for g in &mut self.generators {
            let lut = &g.lut;
            let part: FxHashSet<K> = match g.arity {
                1 => (done..n)
                    .into_par_iter()
                    .fold(FxHashSet::default, |mut acc, a| {
                        let out: Vec<u8> = members[a].iter().map(|&x| lut[x as usize]).collect();
                        note(&mut acc, index, &out, w);
                        acc
                    })
                    .reduce(FxHashSet::default, merge),
                2 => (0..n)
                    .into_par_iter()
                    .fold(FxHashSet::default, |mut acc, a| {
                        let mut out = vec![0u8; len];
                        let fa = &members[a];
                        for b in fresh(a) {
                            let fb = &members[b];
                            for i in 0..len {
                                out[i] = lut[((fa[i] as usize) << w) | fb[i] as usize];
                            }
                            note(&mut acc, index, &out, w);
                        }
                        acc
                    })
                    .reduce(FxHashSet::default, merge),
                _ => {
                    let row = 1usize << w;
                    let sig_index = &g.sig_index;
                    let new_sigs: FxHashSet<Box<[u8]>> = (0..n)
                        .into_par_iter()
                        .fold(FxHashSet::default, |mut acc, a| {
                            let mut sig = vec![0u8; len * row];
                            let fa = &members[a];
                            for b in fresh(a) {
                                let fb = &members[b];
                                for i in 0..len {
                                    let base = ((fa[i] as usize) << (2 * w)) | ((fb[i] as usize) << w);
                                    sig[i * row..(i + 1) * row]
                                        .copy_from_slice(&lut[base..base + row]);
                                }
                                note(&mut acc, sig_index, &sig, w);
                            }
                            acc
                        })
                        .reduce(FxHashSet::default, merge);
                    let mut new_sigs: Vec<_> = new_sigs.into_iter().collect();
                    new_sigs.sort();
                    for s in new_sigs {
                        g.sig_index.insert(s.clone());
                        g.sigs.push(s);
                    }
                    let sigs = &g.sigs;
                    let sigs_done = g.sigs_done;
                    let part = (0..sigs.len())
                        .into_par_iter()
                        .fold(FxHashSet::default, |mut acc, s| {
                            let mut out = vec![0u8; len];
                            let sig = &sigs[s];
                            let range = if s < sigs_done { done..n } else { 0..n };
                            for c in range {
                                let fc = &members[c];
                                for i in 0..len {
                                    out[i] = sig[i * row + fc[i] as usize];
                                }
                                note(&mut acc, index, &out, w);
                            }
                            acc
                        })
                        .reduce(FxHashSet::default, merge);
                    g.sigs_done = g.sigs.len();
                    part
                }
            };
            found = merge(found, part);
        }
        found
    }
}

fn lanes(fv: &FunctionVector) -> Vec<u8> {
    fv.outputs.iter().map(|&v| v as u8).collect()
}

fn to_vector(width: Width, vars: usize, v: &[u8]) -> FunctionVector {
    FunctionVector {
        width,
        vars,
        outputs: v.iter().map(|&x| u32::from(x)).collect(),
    }
}

/// Whether `width * vars`-shaped vectors fit the packed `u64` key.
fn packs(width: Width, vars: usize) -> Result<bool> {
    Ok(FunctionVector::len_for(width, vars)? as u64 * u64::from(width.bits()) <= 64)
}

/// Smallest set containing the seed functions and closed under pointwise
/// application of every operator in `ops`.
pub fn close(ops: &OpSet, vars: usize, seed: SeedSet, limits: &ClosureLimits) -> Result<ClosureResult> {
    if packs(ops.width(), vars)? {
        close_with::<u64>(ops, vars, seed, limits)
    } else {
        close_with::<Box<[u8]>>(ops, vars, seed, limits)
    }
}

fn close_with<K: Key>(ops: &OpSet, vars: usize, seed: SeedSet, limits: &ClosureLimits) -> Result<ClosureResult> {
    let width = ops.width();
    let mut closer = Closer::<K>::new(ops, vars)?;
    for s in seed.functions(width, vars)? {
        closer.insert(K::pack(&lanes(&s), width.bits()));
    }

    let mut done = 0;
    let mut iterations = 0;
    let mut complete = true;
    while done < closer.members.len() {
        let n = closer.members.len();
        let found = closer.round(done);
        done = n;
        if found.is_empty() {
            break;
        }
        iterations += 1;
        let mut found: Vec<_> = found.into_iter().collect();
        found.sort();
        for v in found {
            closer.insert(v);
        }
        if closer.members.len() > limits.max_members {
            complete = false;
            break;
        }
    }

    let mut members: Vec<FunctionVector> = closer
        .members
        .iter()
        .map(|v| to_vector(width, vars, v))
        .collect();
    members.sort_by(FunctionVector::cmp_code);
    let contains_constant = members.iter().any(|m| m.constant_value().is_some());
    Ok(ClosureResult {
        generators: ops.names(),
        seed,
        width,
        vars,
        members,
        iterations,
        contains_constant,
        complete,
    })
}

/// Whether applying every operator in `ops` to every tuple of `members` stays inside `members`.
pub fn is_fixpoint(members: &[FunctionVector], ops: &OpSet) -> Result<bool> {
    let Some(first) = members.first() else {
        return Ok(true);
    };
    if members.iter().any(|m| m.width != ops.width() || m.vars != first.vars) {
        return Err(Error::usage("members disagree in shape with the operator set"));
    }
    if packs(ops.width(), first.vars)? {
        fixpoint_with::<u64>(members, ops)
    } else {
        fixpoint_with::<Box<[u8]>>(members, ops)
    }
}

fn fixpoint_with<K: Key>(members: &[FunctionVector], ops: &OpSet) -> Result<bool> {
    let mut closer = Closer::<K>::new(ops, members[0].vars)?;
    for m in members {
        closer.insert(K::pack(&lanes(m), ops.width().bits()));
    }
    Ok(closer.round(0).is_empty())
}

pub fn verify_fixpoint(result: &ClosureResult, ops: &OpSet) -> Result<bool> {
    is_fixpoint(&result.members, ops)
}

/// One decimal code per line, ascending.
pub fn dump_closure(result: &ClosureResult, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_dump(&result.members, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_dump(members: &[FunctionVector], out: &mut impl Write) -> Result<()> {
    let mut codes: Vec<BigUint> = members.iter().map(FunctionVector::code).collect();
    codes.sort();
    for c in codes {
        writeln!(out, "{c}")?;
    }
    Ok(())
}

pub fn load_dump(path: impl AsRef<Path>, width: Width, vars: usize) -> Result<Vec<FunctionVector>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut members = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let location = || format!("{}: line {}", path.display(), lineno + 1);
        let code: BigUint = line
            .parse()
            .map_err(|_| Error::parse(location(), format!("`{line}` is not a decimal code")))?;
        members.push(
            FunctionVector::from_code(width, vars, &code)
                .map_err(|e| Error::parse(location(), e.to_string()))?,
        );
    }
    Ok(members)
}

/// The five 2-bit, two-variable table conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FootnoteFlags {
    /// f(0,0) = 0
    pub i: bool,
    /// odd, odd -> odd
    pub ii: bool,
    /// even, even -> even
    pub iii: bool,
    /// parity is unchanged by stepping either input by 2
    pub iv: bool,
    /// opposite edges of every 2-step square have equal differences (mod 4)
    pub v: bool,
}

impl FootnoteFlags {
    pub fn all(&self) -> bool {
        self.i && self.ii && self.iii && self.iv && self.v
    }
}

pub fn footnote_conditions(fv: &FunctionVector) -> Result<FootnoteFlags> {
    if fv.width.bits() != 2 || fv.vars != 2 {
        return Err(Error::usage(format!(
            "footnote conditions need a 2-bit, 2-variable function, got width {} with {} variables",
            fv.width, fv.vars
        )));
    }
    let mut table = [0u8; 16];
    for (t, &v) in table.iter_mut().zip(&fv.outputs) {
        *t = v as u8;
    }
    Ok(flags_of(&table))
}

/// `table[x + 4y] = f(x, y)`.
fn flags_of(table: &[u8; 16]) -> FootnoteFlags {
    let f = |x: usize, y: usize| table[(x & 3) + 4 * (y & 3)];
    let cells = || (0..4).flat_map(|y| (0..4).map(move |x| (x, y)));
    let base = || (0..2).flat_map(|y| (0..2).map(move |x| (x, y)));
    let sub = |a: u8, b: u8| a.wrapping_sub(b) & 3;
    FootnoteFlags {
        i: f(0, 0) == 0,
        ii: cells()
            .filter(|&(x, y)| x % 2 == 1 && y % 2 == 1)
            .all(|(x, y)| f(x, y) % 2 == 1),
        iii: cells()
            .filter(|&(x, y)| x % 2 == 0 && y % 2 == 0)
            .all(|(x, y)| f(x, y) % 2 == 0),
        iv: base().all(|(x, y)| {
            let p = f(x, y) % 2;
            [f(x + 2, y), f(x, y + 2), f(x + 2, y + 2)]
                .iter()
                .all(|&v| v % 2 == p)
        }),
        v: base().all(|(x, y)| {
            sub(f(x, y + 2), f(x, y)) == sub(f(x + 2, y + 2), f(x + 2, y))
                && sub(f(x + 2, y), f(x, y)) == sub(f(x + 2, y + 2), f(x, y + 2))
        }),
    }
}

fn decode_code16(code: u32) -> [u8; 16] {
    std::array::from_fn(|i| ((code >> (2 * i)) & 3) as u8)
}

/// Number of 2-bit tables satisfying all five conditions, by enumerating all 2^32 tables.
pub fn count_footnote_tables_brute() -> u64 {
    (0u32..1 << 16)
        .into_par_iter()
        .map(|hi| {
            (0u32..1 << 16)
                .filter(|&lo| flags_of(&decode_code16((hi << 16) | lo)).all())
                .count() as u64
        })
        .sum()
}

/// Same count, factored over the four residue classes of (x mod 2, y mod 2).
/// Every condition only relates entries in one class, so each class's
/// 256 assignments are checked against a filler table (mul) that satisfies
/// all conditions elsewhere, and the per-class counts multiply.
pub fn count_footnote_tables_factored() -> u64 {
    let filler: [u8; 16] = std::array::from_fn(|i| (((i & 3) * (i >> 2)) & 3) as u8);
    debug_assert!(flags_of(&filler).all());
    let mut total = 1u64;
    for (px, py) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        let cells = [(px, py), (px + 2, py), (px, py + 2), (px + 2, py + 2)];
        let mut count = 0;
        for assignment in 0u32..256 {
            let mut table = filler;
            for (k, &(x, y)) in cells.iter().enumerate() {
                table[x + 4 * y] = ((assignment >> (2 * k)) & 3) as u8;
            }
            if flags_of(&table).all() {
                count += 1;
            }
        }
        total *= count;
    }
    total
}

/// Subset of the per-tuple conditions (i) zero point, (ii) all-odd, (iii) all-even.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Conditions {
    pub zero: bool,
    pub odd: bool,
    pub even: bool,
}

impl Conditions {
    pub fn names(&self) -> Vec<&'static str> {
        [(self.zero, "i"), (self.odd, "ii"), (self.even, "iii")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect()
    }
}

impl FromStr for Conditions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut c = Conditions::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "i" => c.zero = true,
                "ii" => c.odd = true,
                "iii" => c.even = true,
                other => return Err(Error::usage(format!("unknown condition `{other}`"))),
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableCount {
    #[serde(serialize_with = "serialize_count")]
    pub analytic: BigUint,
    /// `None` when the table space exceeds 2^32 or brute force was not requested.
    pub brute: Option<u64>,
    pub conditions: Vec<&'static str>,
    pub width: u32,
    pub arity: usize,
}

/// JSON integer when it fits in u64, decimal string otherwise.
fn serialize_count<S: Serializer>(v: &BigUint, s: S) -> std::result::Result<S::Ok, S::Error> {
    match u64::try_from(v) {
        Ok(small) => s.serialize_u64(small),
        Err(_) => s.collect_str(v),
    }
}

/// Largest table code width enumerated by brute force.
pub const MAX_BRUTE_BITS: u64 = 32;

/// Counts tables of the given shape satisfying `conditions`: analytically
/// from per-class output choices, and by enumeration when `brute` is set and
/// the table space has at most 2^32 members.
pub fn count_tables(width: Width, arity: usize, conditions: Conditions, brute: bool) -> Result<TableCount> {
    if !(1..=3).contains(&arity) {
        return Err(Error::usage(format!("arity {arity} outside 1..=3")));
    }
    let Some(entries) = width.table_len(arity) else {
        return Err(Error::usage(format!(
            "tables of arity {arity} at width {width} are too large to count"
        )));
    };
    let w = width.bits();
    let full = BigUint::from(1u64 << w);
    let half = BigUint::from(1u64 << (w - 1));
    let mut analytic = BigUint::from(1u8);
    for j in 0..entries {
        let t = decode_tuple(width, arity, j as u64);
        let all_zero = t.iter().all(|&v| v == 0);
        let all_odd = t.iter().all(|&v| v & 1 == 1);
        let all_even = t.iter().all(|&v| v & 1 == 0);
        let choices = if all_zero && conditions.zero {
            BigUint::from(1u8)
        } else if (all_odd && conditions.odd) || (all_even && conditions.even) {
            half.clone()
        } else {
            full.clone()
        };
        analytic *= choices;
    }

    let total_bits = entries as u64 * u64::from(w);
    let brute = (brute && total_bits <= MAX_BRUTE_BITS)
        .then(|| brute_count(width, arity, entries, conditions));
    Ok(TableCount {
        analytic,
        brute,
        conditions: conditions.names(),
        width: w,
        arity,
    })
}

/// Streams over every table code and tests the conditions entry by entry
/// through a (mask, required bits) pair per code.
fn brute_count(width: Width, arity: usize, entries: usize, conditions: Conditions) -> u64 {
    let w = width.bits();
    let mut mask = 0u64;
    let mut want = 0u64;
    for j in 0..entries {
        let t = decode_tuple(width, arity, j as u64);
        let shift = j as u32 * w;
        if conditions.zero && t.iter().all(|&v| v == 0) {
            mask |= width.mask() << shift;
        }
        if conditions.odd && t.iter().all(|&v| v & 1 == 1) {
            mask |= 1 << shift;
            want |= 1 << shift;
        }
        if conditions.even && t.iter().all(|&v| v & 1 == 0) {
            mask |= 1 << shift;
        }
    }
    let total_bits = entries as u32 * w;
    let chunk_bits = total_bits.saturating_sub(16);
    (0u64..1 << (total_bits - chunk_bits))
        .into_par_iter()
        .map(|hi| {
            let base = hi << chunk_bits;
            (0u64..1 << chunk_bits)
                .filter(|&lo| ((base | lo) & mask) == want)
                .count() as u64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(bits: u32) -> Width {
        Width::new(bits).unwrap()
    }

    fn set(bits: u32, names: &[&str]) -> OpSet {
        OpSet::builtins(w(bits), names).unwrap()
    }

    fn table16(f: impl Fn(u64, u64) -> u64) -> FunctionVector {
        let outputs = (0..16u64).map(|i| (f(i & 3, i >> 2) & 3) as u32).collect();
        FunctionVector::new(w(2), 2, outputs).unwrap()
    }

    #[test]
    fn projections_and_codes() {
        let x = FunctionVector::projection(w(2), 2, 0).unwrap();
        let y = FunctionVector::projection(w(2), 2, 1).unwrap();
        assert_eq!(x.outputs()[..5], [0, 1, 2, 3, 0]);
        assert_eq!(y.outputs()[..5], [0, 0, 0, 0, 1]);
        assert_eq!(x.assignment(6), vec![2, 1]);
        assert_eq!(x.code(), BigUint::from(0xE4E4_E4E4u32));
        assert_eq!(FunctionVector::from_code(w(2), 2, &x.code()).unwrap(), x);
        assert!(FunctionVector::projection(w(2), 2, 2).is_err());
    }

    #[test]
    fn code_order_matches_numeric_order() {
        let a = FunctionVector::new(w(3), 1, vec![7, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        let b = FunctionVector::new(w(3), 1, vec![0, 1, 0, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(a.cmp_code(&b), a.code().cmp(&b.code()));
        assert_eq!(a.cmp_code(&b), Ordering::Less);
    }

    #[test]
    fn empty_generator_set() {
        let r = close(&OpSet::new(w(2)), 2, SeedSet::Projections, &ClosureLimits::default()).unwrap();
        assert_eq!(r.size(), 2);
        assert!(!r.contains_constant);
        assert!(r.complete);
    }

    #[test]
    fn unary_closures() {
        // polynomial functions without constant term on Z/4
        let r = close(&set(2, &["mul", "add2"]), 1, SeedSet::Projections, &ClosureLimits::default())
            .unwrap();
        assert_eq!(r.size(), 16);
        assert!(r.contains_constant);
        assert!(verify_fixpoint(&r, &set(2, &["mul", "add2"])).unwrap());

        let r = close(&set(2, &["mul", "add2"]), 1, SeedSet::ProjectionsAndOne, &ClosureLimits::default())
            .unwrap();
        assert_eq!(r.size(), 64);
    }

    #[test]
    fn mul_add3_closure_is_parity_stable() {
        for (bits, vars) in [(1, 1), (1, 2), (2, 1), (3, 1), (1, 3)] {
            let ops = set(bits, &["mul", "add3"]);
            let r = close(&ops, vars, SeedSet::Projections, &ClosureLimits::default()).unwrap();
            assert!(r.complete);
            assert!(!r.contains_constant, "w={bits} k={vars}");
            assert!(verify_fixpoint(&r, &ops).unwrap());
            for m in &r.members {
                assert_eq!(m.outputs()[0], 0);
                for i in 0..m.len() {
                    if m.assignment(i).iter().all(|v| v & 1 == 1) {
                        assert_eq!(m.outputs()[i] & 1, 1);
                    }
                }
            }
        }
    }

    #[test]
    fn member_bound_flags_partial_result() {
        let limits = ClosureLimits { max_members: 10 };
        let r = close(&set(2, &["mul", "add2"]), 2, SeedSet::Projections, &limits).unwrap();
        assert!(!r.complete);
        assert!(r.size() > 10);
    }

    #[test]
    fn fixpoint_detects_missing_members() {
        let ops = set(2, &["mul", "add2"]);
        let r = close(&ops, 1, SeedSet::Projections, &ClosureLimits::default()).unwrap();
        let mut partial = r.members.clone();
        partial.pop();
        assert!(!is_fixpoint(&partial, &ops).unwrap());
    }

    #[test]
    fn dump_round_trip() {
        let ops = set(2, &["mul", "add2"]);
        let r = close(&ops, 1, SeedSet::Projections, &ClosureLimits::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("closure.txt");
        dump_closure(&r, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 16);
        let codes: Vec<u64> = text.lines().map(|l| l.parse().unwrap()).collect();
        assert!(codes.windows(2).all(|p| p[0] < p[1]));
        let back = load_dump(&path, w(2), 1).unwrap();
        assert_eq!(back, r.members);
        assert!(is_fixpoint(&back, &ops).unwrap());

        fs::write(&path, "12\nabc\n").unwrap();
        let err = load_dump(&path, w(2), 1).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn footnote_flag_examples() {
        let mul = table16(|x, y| x * y);
        assert!(footnote_conditions(&mul).unwrap().all());

        let zero = FunctionVector::constant(w(2), 2, 0).unwrap();
        let flags = footnote_conditions(&zero).unwrap();
        assert_eq!(
            flags,
            FootnoteFlags { i: true, ii: false, iii: true, iv: true, v: true }
        );

        let add2 = table16(|x, y| x + y);
        let flags = footnote_conditions(&add2).unwrap();
        assert!(flags.i && !flags.ii && flags.iii && flags.iv && flags.v);

        // flip the high bit at (2, 2): parities stay, the 2-step square's edges stop matching
        let mut broken = mul.outputs().to_vec();
        broken[2 + 4 * 2] ^= 2;
        let flags = footnote_conditions(&FunctionVector::new(w(2), 2, broken).unwrap()).unwrap();
        assert!(flags.iv && !flags.v);

        assert!(footnote_conditions(&FunctionVector::projection(w(2), 1, 0).unwrap()).is_err());
    }

    #[test]
    fn footnote_count_factored() {
        // 4 parity patterns for the mixed classes, then per-class high bits:
        // 4 choices in the zero class, 8 in each of the other three.
        assert_eq!(count_footnote_tables_factored(), 4 * 4 * 8 * 8 * 8);
    }

    #[test]
    fn count_examples() {
        let c = count_tables(w(2), 2, "i,ii".parse().unwrap(), false).unwrap();
        assert_eq!(c.analytic, BigUint::from(1u64 << 26));
        assert_eq!(c.brute, None);

        let c = count_tables(w(1), 2, "i,ii".parse().unwrap(), true).unwrap();
        assert_eq!(c.analytic, BigUint::from(4u8));
        assert_eq!(c.brute, Some(4));
    }

    #[test]
    fn count_analytic_matches_brute_where_feasible() {
        let subsets = ["", "i", "ii", "iii", "i,ii", "i,iii", "ii,iii", "i,ii,iii"];
        for (bits, arity) in [(1, 1), (1, 2), (1, 3), (2, 1), (3, 1)] {
            for s in subsets {
                let c = count_tables(w(bits), arity, s.parse().unwrap(), true).unwrap();
                assert_eq!(
                    Some(c.analytic.clone()),
                    c.brute.map(BigUint::from),
                    "w={bits} arity={arity} {{{s}}}"
                );
            }
        }
    }

    #[test]
    fn count_json_shape() {
        let c = count_tables(w(2), 2, "i,ii".parse().unwrap(), false).unwrap();
        let json = serde_json::to_value(&c).unwrap();
        assert_eq!(json["analytic"], 67108864u64);
        assert_eq!(json["brute"], serde_json::Value::Null);
        assert_eq!(json["conditions"], serde_json::json!(["i", "ii"]));

        let big = count_tables(w(2), 3, Conditions::default(), false).unwrap();
        let json = serde_json::to_value(&big).unwrap();
        assert!(json["analytic"].is_string());
    }

    #[test]
    fn condition_parsing() {
        assert_eq!(
            "i, iii".parse::<Conditions>().unwrap(),
            Conditions { zero: true, odd: false, even: true }
        );
        assert!("iv".parse::<Conditions>().is_err());
        assert_eq!("projections+one".parse::<SeedSet>().unwrap(), SeedSet::ProjectionsAndOne);
    }
}
