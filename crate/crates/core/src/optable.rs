//! n-bit operators of arity 1 to 3.
//!
//! An [`Operator`] is either a dense output table or one of a fixed set of
//! builtin rules. All arithmetic is modulo `2^width`. Dense tables are
//! row-major with the first argument most significant: for arity 2 the entry
//! for `(x, y)` sits at `x * 2^w + y`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Formula, Node};

pub const MAX_WIDTH: u32 = 32;
pub const MAX_ARITY: usize = 3;
/// Dense tables hold at most `2^MAX_TABLE_BITS` entries.
pub const MAX_TABLE_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Width(u32);

impl Width {
    pub fn new(bits: u32) -> Result<Self> {
        if (1..=MAX_WIDTH).contains(&bits) {
            Ok(Width(bits))
        } else {
            Err(Error::usage(format!("width {bits} outside 1..={MAX_WIDTH}")))
        }
    }

    #[inline]
    pub const fn bits(self) -> u32 {
        self.0
    }

    #[inline]
    pub const fn mask(self) -> u64 {
        (1u64 << self.0) - 1
    }

    #[inline]
    pub const fn modulus(self) -> u64 {
        1u64 << self.0
    }

    #[inline]
    pub const fn reduce(self, v: u64) -> u64 {
        v & self.mask()
    }

    /// Number of entries of a dense table of the given arity, if one is permitted.
    pub fn table_len(self, arity: usize) -> Option<usize> {
        let bits = self.0 * arity as u32;
        (bits <= MAX_TABLE_BITS).then(|| 1usize << bits)
    }
}

impl TryFrom<u32> for Width {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        Width::new(bits)
    }
}

impl From<Width> for u32 {
    fn from(w: Width) -> u32 {
        w.0
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Operators with a closed-form rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Mul,
    Add2,
    Add3,
    DivClassical,
    SafeDiv,
    ParityCollapse,
    Identity,
    /// `proj{index+1}of{arity}`, returns argument `index`.
    Projection { index: usize, arity: usize },
}

impl Builtin {
    pub const NAMED: [Builtin; 7] = [
        Builtin::Mul,
        Builtin::Add2,
        Builtin::Add3,
        Builtin::DivClassical,
        Builtin::SafeDiv,
        Builtin::ParityCollapse,
        Builtin::Identity,
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        let named = match name {
            "mul" => Some(Builtin::Mul),
            "add2" => Some(Builtin::Add2),
            "add3" => Some(Builtin::Add3),
            "div_classical" => Some(Builtin::DivClassical),
            "safe_div" => Some(Builtin::SafeDiv),
            "parity_collapse" => Some(Builtin::ParityCollapse),
            "identity" => Some(Builtin::Identity),
            _ => None,
        };
        named.or_else(|| {
            let rest = name.strip_prefix("proj")?;
            let (k, n) = rest.split_once("of")?;
            let (k, n): (usize, usize) = (k.parse().ok()?, n.parse().ok()?);
            ((1..=MAX_ARITY).contains(&n) && (1..=n).contains(&k))
                .then(|| Builtin::Projection { index: k - 1, arity: n })
        })
    }

    pub fn name(self) -> String {
        match self {
            Builtin::Mul => "mul".into(),
            Builtin::Add2 => "add2".into(),
            Builtin::Add3 => "add3".into(),
            Builtin::DivClassical => "div_classical".into(),
            Builtin::SafeDiv => "safe_div".into(),
            Builtin::ParityCollapse => "parity_collapse".into(),
            Builtin::Identity => "identity".into(),
            Builtin::Projection { index, arity } => format!("proj{}of{}", index + 1, arity),
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Builtin::Mul | Builtin::Add2 | Builtin::DivClassical | Builtin::SafeDiv => 2,
            Builtin::Add3 => 3,
            Builtin::ParityCollapse | Builtin::Identity => 1,
            Builtin::Projection { arity, .. } => arity,
        }
    }

    /// Arguments must already be reduced mod `2^width`.
    #[inline]
    pub fn apply(self, width: Width, args: &[u64]) -> u64 {
        match self {
            Builtin::Mul => width.reduce(args[0].wrapping_mul(args[1])),
            Builtin::Add2 => width.reduce(args[0] + args[1]),
            Builtin::Add3 => width.reduce(args[0] + args[1] + args[2]),
            Builtin::DivClassical => div_classical(args[0], args[1]),
            Builtin::SafeDiv => safe_div(args[0], args[1], width),
            Builtin::ParityCollapse => parity_collapse(args[0], width),
            Builtin::Identity => args[0],
            Builtin::Projection { index, .. } => args[index],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Table(Vec<u32>),
    Rule(Builtin),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operator {
    name: String,
    width: Width,
    arity: usize,
    body: Body,
}

impl Operator {
    pub fn builtin(name: &str, width: Width) -> Result<Self> {
        let rule = Builtin::from_name(name)
            .ok_or_else(|| Error::usage(format!("unknown builtin operator `{name}`")))?;
        Ok(Operator::from_rule(rule, width))
    }

    pub fn from_rule(rule: Builtin, width: Width) -> Self {
        Operator {
            name: rule.name(),
            width,
            arity: rule.arity(),
            body: Body::Rule(rule),
        }
    }

    pub fn from_table(
        name: impl Into<String>,
        width: Width,
        arity: usize,
        table: Vec<u32>,
    ) -> Result<Self> {
        let name = name.into();
        check_name(&name)?;
        check_arity(arity)?;
        let len = width.table_len(arity).ok_or_else(|| {
            Error::usage(format!(
                "dense table at width {width}, arity {arity} exceeds 2^{MAX_TABLE_BITS} entries"
            ))
        })?;
        if table.len() != len {
            return Err(Error::parse(
                "table",
                format!("expected {len} entries, found {}", table.len()),
            ));
        }
        if let Some((i, v)) = table
            .iter()
            .enumerate()
            .find(|(_, &v)| u64::from(v) > width.mask())
        {
            return Err(Error::parse(
                format!("table[{i}]"),
                format!("entry {v} out of range for width {width}"),
            ));
        }
        Ok(Operator {
            name,
            width,
            arity,
            body: Body::Table(table),
        })
    }

    /// Tabulate an arbitrary function; outputs are reduced mod `2^width`.
    pub fn from_fn(
        name: impl Into<String>,
        width: Width,
        arity: usize,
        f: impl Fn(&[u64]) -> u64,
    ) -> Result<Self> {
        check_arity(arity)?;
        if width.table_len(arity).is_none() {
            return Err(Error::usage(format!(
                "cannot tabulate arity {arity} at width {width}"
            )));
        }
        let table = input_tuples(width, arity)
            .map(|t| width.reduce(f(&t)) as u32)
            .collect();
        Operator::from_table(name, width, arity, table)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> Width {
        self.width
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn body(&self) -> &Body {
        &self.body
    }

    pub fn table(&self) -> Option<&[u32]> {
        match &self.body {
            Body::Table(t) => Some(t),
            Body::Rule(_) => None,
        }
    }

    pub fn rule(&self) -> Option<Builtin> {
        match self.body {
            Body::Rule(r) => Some(r),
            Body::Table(_) => None,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        check_name(&name)?;
        self.name = name;
        Ok(self)
    }

    /// Checked evaluation.
    pub fn eval(&self, args: &[u64]) -> Result<u64> {
        if args.len() != self.arity {
            return Err(Error::usage(format!(
                "`{}` takes {} arguments, got {}",
                self.name,
                self.arity,
                args.len()
            )));
        }
        if let Some(v) = args.iter().find(|&&v| v > self.width.mask()) {
            return Err(Error::usage(format!(
                "argument {v} out of range for width {}",
                self.width
            )));
        }
        Ok(self.apply(args))
    }

    /// Unchecked evaluation for hot loops.
    #[inline]
    pub fn apply(&self, args: &[u64]) -> u64 {
        debug_assert_eq!(args.len(), self.arity);
        match &self.body {
            Body::Table(t) => u64::from(t[table_index(self.width, args)]),
            Body::Rule(r) => r.apply(self.width, args),
        }
    }

    /// Dense form of this operator. Tables are returned unchanged.
    pub fn tabulate(&self) -> Result<Operator> {
        match &self.body {
            Body::Table(_) => Ok(self.clone()),
            Body::Rule(r) => Operator::from_fn(self.name.clone(), self.width, self.arity, |t| {
                r.apply(self.width, t)
            }),
        }
    }

    pub fn to_file(&self) -> Result<OperatorFile> {
        let dense = self.tabulate()?;
        Ok(OperatorFile {
            name: dense.name.clone(),
            width: dense.width.bits(),
            arity: dense.arity,
            table: dense.table().expect("tabulated").to_vec(),
        })
    }

    pub fn from_file(file: OperatorFile) -> Result<Self> {
        let width = Width::new(file.width).map_err(|e| Error::parse("width", e.to_string()))?;
        if !(1..=MAX_ARITY).contains(&file.arity) {
            return Err(Error::parse(
                "arity",
                format!("arity {} outside 1..={MAX_ARITY}", file.arity),
            ));
        }
        Operator::from_table(file.name, width, file.arity, file.table)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file()?).expect("operator file serializes"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: OperatorFile = serde_json::from_str(text).map_err(|e| {
            Error::parse(format!("line {}, column {}", e.line(), e.column()), e.to_string())
        })?;
        Operator::from_file(file)
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@w={}", self.name, self.width)
    }
}

fn check_arity(arity: usize) -> Result<()> {
    if (1..=MAX_ARITY).contains(&arity) {
        Ok(())
    } else {
        Err(Error::usage(format!("arity {arity} outside 1..={MAX_ARITY}")))
    }
}

/// Operator names share the formula identifier syntax `[a-z][a-z0-9_]*`.
pub(crate) fn check_name(name: &str) -> Result<()> {
    if crate::expr::is_identifier(name) {
        Ok(())
    } else {
        Err(Error::parse(
            "name",
            format!("`{name}` is not an identifier ([a-z][a-z0-9_]*)"),
        ))
    }
}

/// On-disk operator format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorFile {
    pub name: String,
    pub width: u32,
    pub arity: usize,
    pub table: Vec<u32>,
}

pub fn load_operator(path: impl AsRef<Path>) -> Result<Operator> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    Operator::from_json(&text).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn save_operator(op: &Operator, path: impl AsRef<Path>) -> Result<()> {
    let mut text = op.to_json()?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[inline]
pub fn table_index(width: Width, args: &[u64]) -> usize {
    args.iter()
        .fold(0usize, |acc, &a| (acc << width.bits()) | a as usize)
}

/// All input tuples in table order (first argument most significant).
pub fn input_tuples(width: Width, arity: usize) -> impl Iterator<Item = Vec<u64>> {
    let bits = width.bits() * arity as u32;
    assert!(bits < 64, "input space too large to enumerate");
    (0..1u64 << bits).map(move |i| decode_tuple(width, arity, i))
}

pub fn decode_tuple(width: Width, arity: usize, index: u64) -> Vec<u64> {
    (0..arity)
        .map(|j| (index >> (width.bits() * (arity - 1 - j) as u32)) & width.mask())
        .collect()
}

/// All-odd input tuples in lexicographic order.
pub fn odd_tuples(width: Width, arity: usize) -> impl Iterator<Item = Vec<u64>> {
    let half = Width::new(width.bits() - 1).ok();
    let count = 1u64 << ((width.bits() - 1) * arity as u32);
    (0..count).map(move |i| match half {
        Some(h) => decode_tuple(h, arity, i).into_iter().map(|v| 2 * v + 1).collect(),
        None => vec![1; arity],
    })
}

/// Floor division with `x / 0 = 0`.
#[inline]
pub fn div_classical(x: u64, y: u64) -> u64 {
    x.checked_div(y).unwrap_or(0)
}

/// Classical division, plus one when both inputs are odd and the quotient is even.
#[inline]
pub fn safe_div(x: u64, y: u64, width: Width) -> u64 {
    let q = div_classical(x, y);
    if x & 1 == 1 && y & 1 == 1 && q & 1 == 0 {
        width.reduce(q + 1)
    } else {
        q
    }
}

/// Whether `q` is a corrected quotient of `x / y`: true iff `q * y` falls
/// outside `(x - y, x]`. Computed without wraparound.
pub fn correction_check(x: u64, y: u64, q: u64) -> Result<bool> {
    if y == 0 {
        return Err(Error::domain("correction check needs a non-zero divisor"));
    }
    let (x, y, q) = (i128::from(x), i128::from(y), i128::from(q));
    let product = q * y;
    Ok(!(x - y < product && product <= x))
}

/// `x^(2^w) mod 2^w` by `w` successive squarings: 1 for odd `x`, 0 for even.
#[inline]
pub fn parity_collapse(x: u64, width: Width) -> u64 {
    (0..width.bits()).fold(width.reduce(x), |acc, _| width.reduce(acc.wrapping_mul(acc)))
}

/// `n * var` built from nested `add3` nodes: `((v+v+v)+v+v)+v+v ...`.
pub fn scalar_mul_formula(n: u64, var: &str, width: Width) -> Result<Formula> {
    let arg = Node::var(var);
    Ok(Formula::from_root(scalar_mul_node(n, &arg, width)?))
}

/// Same construction over an arbitrary subtree.
pub fn scalar_mul_node(n: u64, arg: &Node, width: Width) -> Result<Node> {
    if n.is_multiple_of(2) {
        return Err(Error::domain(format!(
            "scalar {n} is even; only odd multiples are reachable with add3"
        )));
    }
    if n > width.mask() {
        return Err(Error::domain(format!("scalar {n} does not fit width {width}")));
    }
    let mut node = arg.clone();
    for _ in 0..(n - 1) / 2 {
        node = Node::apply("add3", vec![node, arg.clone(), arg.clone()]);
    }
    Ok(node)
}

/// `n * arg` for an `arg` that only takes the values 0 and 1, in
/// O(log^2 n) nodes: odd `n = p*p + r + s` becomes
/// `add3(mul(p*arg, p*arg), r*arg, s*arg)`. Small `n` falls back to the chain.
pub fn indicator_scalar_node(n: u64, arg: &Node, width: Width) -> Result<Node> {
    const CHAIN_MAX: u64 = 9;
    if n <= CHAIN_MAX || n.is_multiple_of(2) || n > width.mask() {
        return scalar_mul_node(n, arg, width);
    }
    let mut p = (n - 2).isqrt();
    if p.is_multiple_of(2) {
        p -= 1;
    }
    let rest = n - p * p;
    let half = rest / 2;
    let (r, s) = if half % 2 == 1 { (half, half) } else { (half - 1, half + 1) };
    let square = indicator_scalar_node(p, arg, width)?;
    Ok(Node::apply(
        "add3",
        vec![
            Node::apply("mul", vec![square.clone(), square]),
            indicator_scalar_node(r, arg, width)?,
            indicator_scalar_node(s, arg, width)?,
        ],
    ))
}

/// Named operators of a single width, iterated in name order.
#[derive(Debug, Clone)]
pub struct OpSet {
    width: Width,
    ops: BTreeMap<String, Arc<Operator>>,
}

impl OpSet {
    pub fn new(width: Width) -> Self {
        OpSet {
            width,
            ops: BTreeMap::new(),
        }
    }

    pub fn builtins(width: Width, names: &[&str]) -> Result<Self> {
        let mut set = OpSet::new(width);
        for name in names {
            set.insert(Operator::builtin(name, width)?)?;
        }
        Ok(set)
    }

    pub fn width(&self) -> Width {
        self.width
    }

    pub fn insert(&mut self, op: Operator) -> Result<()> {
        if op.width() != self.width {
            return Err(Error::usage(format!(
                "operator {op} does not match set width {}",
                self.width
            )));
        }
        self.ops.insert(op.name().to_string(), Arc::new(op));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Operator>> {
        self.ops.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Operator>> {
        self.ops.values()
    }

    pub fn names(&self) -> Vec<String> {
        self.ops.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(bits: u32) -> Width {
        Width::new(bits).unwrap()
    }

    fn op(name: &str, bits: u32) -> Operator {
        Operator::builtin(name, w(bits)).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(op("mul", 8).eval(&[2, 2]).unwrap(), 4);
        assert_eq!(op("add3", 8).eval(&[1, 1, 1]).unwrap(), 3);
        assert_eq!(op("mul", 2).eval(&[3, 3]).unwrap(), 1);
    }

    #[test]
    fn eval_rejects_bad_tuples() {
        assert!(matches!(op("mul", 8).eval(&[1]), Err(Error::Usage(_))));
        assert!(matches!(op("mul", 2).eval(&[4, 1]), Err(Error::Usage(_))));
    }

    #[test]
    fn width_bounds() {
        assert!(Width::new(0).is_err());
        assert!(Width::new(33).is_err());
        assert_eq!(w(32).mask(), u32::MAX as u64);
        assert_eq!(w(8).table_len(2), Some(65536));
        assert_eq!(w(8).table_len(3), None);
    }

    #[test]
    fn division_examples() {
        assert_eq!(div_classical(1, 3), 0);
        assert_eq!(div_classical(0, 0), 0);
        assert_eq!(div_classical(7, 2), 3);
        assert_eq!(div_classical(9, 0), 0);

        let w8 = w(8);
        assert_eq!(safe_div(1, 3, w8), 1);
        assert_eq!(safe_div(0, 0, w8), 0);
        assert_eq!(safe_div(6, 3, w8), 2);
        // quotient of the all-ones pair is already odd
        assert_eq!(safe_div(255, 255, w8), 1);
    }

    #[test]
    fn correction_check_examples() {
        assert!(correction_check(1, 3, safe_div(1, 3, w(8))).unwrap());
        assert!(!correction_check(7, 2, 3).unwrap());
        assert!(!correction_check(9, 3, 3).unwrap());
        assert!(matches!(correction_check(5, 0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn parity_collapse_examples() {
        assert_eq!(parity_collapse(3, w(2)), 1);
        assert_eq!(parity_collapse(6, w(8)), 0);
        // 255 = -1 mod 256; squaring once gives 1
        assert_eq!(parity_collapse(255, w(8)), 1);
    }

    #[test]
    fn parity_collapse_matches_low_bit_up_to_16_bits() {
        for bits in 1..=16 {
            let width = w(bits);
            for x in 0..width.modulus() {
                assert_eq!(parity_collapse(x, width), x & 1, "x={x} w={bits}");
            }
        }
    }

    #[test]
    fn scalar_mul_examples() {
        let w4 = w(4);
        let ops = OpSet::builtins(w4, &["add3"]).unwrap();
        assert_eq!(scalar_mul_formula(1, "x", w4).unwrap().to_string(), "x");

        let five = scalar_mul_formula(5, "x", w4).unwrap();
        assert_eq!(five.to_string(), "(add3 (add3 x x x) x x)");
        assert_eq!(five.compile(&ops).unwrap().eval(&[3]), 15);

        let seven = scalar_mul_formula(7, "x", w4).unwrap();
        assert_eq!(seven.op_count(), 3);
        assert_eq!(seven.compile(&ops).unwrap().eval(&[2]), 14);

        assert!(matches!(scalar_mul_formula(4, "x", w4), Err(Error::Domain(_))));
        assert!(matches!(scalar_mul_formula(17, "x", w4), Err(Error::Domain(_))));
    }

    #[test]
    fn scalar_mul_is_multiplication() {
        let w5 = w(5);
        let ops = OpSet::builtins(w5, &["add3"]).unwrap();
        for n in (1..32).step_by(2) {
            let f = scalar_mul_formula(n, "x", w5).unwrap().compile(&ops).unwrap();
            for x in 0..32 {
                assert_eq!(f.eval(&[x]), (n * x) % 32);
            }
        }
    }

    #[test]
    fn builtin_names_round_trip() {
        for b in Builtin::NAMED {
            assert_eq!(Builtin::from_name(&b.name()), Some(b));
        }
        assert_eq!(
            Builtin::from_name("proj2of3"),
            Some(Builtin::Projection { index: 1, arity: 3 })
        );
        assert_eq!(Builtin::from_name("proj4of3"), None);
        assert_eq!(Builtin::from_name("proj0of2"), None);
        assert_eq!(Builtin::from_name("nosuch"), None);
    }

    #[test]
    fn tables_agree_with_rules() {
        for bits in 1..=8 {
            let width = w(bits);
            for name in ["mul", "add2", "div_classical", "safe_div", "parity_collapse", "identity", "proj2of2"] {
                let rule = op(name, bits);
                let dense = rule.tabulate().unwrap();
                for t in input_tuples(width, rule.arity()) {
                    assert_eq!(rule.apply(&t), dense.apply(&t), "{name} at {t:?}, w={bits}");
                }
            }
        }
        for bits in 1..=5 {
            let rule = op("add3", bits);
            let dense = rule.tabulate().unwrap();
            for t in input_tuples(w(bits), 3) {
                assert_eq!(rule.apply(&t), dense.apply(&t));
            }
        }
    }

    #[test]
    fn table_layout_is_row_major() {
        let sub = Operator::from_fn("sub", w(2), 2, |t| t[0].wrapping_sub(t[1])).unwrap();
        assert_eq!(table_index(w(2), &[1, 3]), 7);
        assert_eq!(sub.table().unwrap()[7], 2);
        assert_eq!(decode_tuple(w(2), 2, 7), vec![1, 3]);
    }

    #[test]
    fn odd_tuples_are_lexicographic() {
        let all: Vec<_> = odd_tuples(w(2), 2).collect();
        assert_eq!(all, vec![vec![1, 1], vec![1, 3], vec![3, 1], vec![3, 3]]);
        assert_eq!(odd_tuples(w(1), 3).collect::<Vec<_>>(), vec![vec![1, 1, 1]]);
    }

    #[test]
    fn json_round_trip() {
        let mul = op("mul", 2);
        let back = Operator::from_json(&mul.to_json().unwrap()).unwrap();
        let w2 = w(2);
        for t in input_tuples(w2, 2) {
            assert_eq!(mul.apply(&t), back.apply(&t));
        }
    }

    #[test]
    fn json_rejects_bad_tables() {
        let short = format!(
            r#"{{"name": "f", "width": 2, "arity": 2, "table": {:?}}}"#,
            vec![0; 15]
        );
        let err = Operator::from_json(&short).unwrap_err();
        assert!(matches!(&err, Error::Parse { location, .. } if location == "table"), "{err}");

        let mut entries = vec![0u32; 16];
        entries[5] = 4;
        let wide = format!(r#"{{"name": "f", "width": 2, "arity": 2, "table": {entries:?}}}"#);
        let err = Operator::from_json(&wide).unwrap_err();
        assert!(matches!(&err, Error::Parse { location, .. } if location == "table[5]"), "{err}");

        let err = Operator::from_json("{\"name\": \"f\",\n \"width\": }").unwrap_err();
        assert!(matches!(&err, Error::Parse { location, .. } if location.starts_with("line 2")), "{err}");

        let err = Operator::from_json(r#"{"name": "F", "width": 1, "arity": 1, "table": [0, 1]}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn opset_requires_matching_width() {
        let mut set = OpSet::new(w(4));
        assert!(set.insert(op("mul", 4)).is_ok());
        assert!(set.insert(op("mul", 8)).is_err());
        assert_eq!(set.names(), vec!["mul".to_string()]);
    }

    #[test]
    fn indicator_scalar_is_compact_and_exact() {
        let width = w(32);
        let ops = OpSet::builtins(width, &["mul", "add3", "parity_collapse"]).unwrap();
        let g = Node::apply("parity_collapse", vec![Node::var("x")]);
        for n in [1u64, 9, 11, 63, 65, 1001, 0xdead_beef, 0xffff_ffff] {
            let node = indicator_scalar_node(n, &g, width).unwrap();
            assert!(node.node_count() < 20_000, "n={n}: {} nodes", node.node_count());
            let f = Formula::from_root(node).compile(&ops).unwrap();
            assert_eq!(f.eval(&[3]), n);
            assert_eq!(f.eval(&[0xffff_fff1]), n);
            assert_eq!(f.eval(&[6]), 0);
        }
        assert!(indicator_scalar_node(12, &g, width).is_err());
    }
}
