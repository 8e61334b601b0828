//! Safety verdicts, safe patches and constant-producing witnesses.
//!
//! An operator is safe alongside `mul` and `add3` exactly when it maps the
//! all-zero tuple to 0 and every all-odd tuple to an odd value. When either
//! condition fails, the witness builders below produce a formula over the
//! operator, `mul`, `add3` and `parity_collapse` that evaluates to a known
//! constant, and check it before returning.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{is_constant, Coverage, Formula, Node, SampleOptions, EXHAUSTIVE_INPUT_BITS};
use crate::optable::{
    decode_tuple, indicator_scalar_node, scalar_mul_node, OpSet, Operator, Width,
};

/// Exhaustive odd-tuple scans stop at this many tuples; beyond it analysis samples.
pub const MAX_EXHAUSTIVE_ODD_TUPLES: u64 = 1 << 30;

/// Larger odd scalars use the mul/add3 square decomposition instead of the add3 chain.
const CHAIN_SCALAR_MAX: u64 = 63;

const HELPERS: [&str; 3] = ["mul", "add3", "parity_collapse"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Safe,
    Unsafe,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Safe => "SAFE",
            Verdict::Unsafe => "UNSAFE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub inputs: Vec<u64>,
    pub output: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub passed: bool,
    pub violation: Option<Violation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub op_name: String,
    pub width: u32,
    pub arity: usize,
    /// (i) all-zero tuple maps to 0; a violation carries k0 = f(0, ..., 0).
    pub condition_zero: ConditionCheck,
    /// (ii) all-odd tuples map to odd values; the least violating tuple is kept.
    pub condition_odd: ConditionCheck,
    pub odd_coverage: Coverage,
    pub verdict: Verdict,
}

impl SafetyReport {
    pub fn is_safe(&self) -> bool {
        self.verdict == Verdict::Safe
    }
}

pub fn analyze(op: &Operator) -> SafetyReport {
    analyze_with(op, &SampleOptions::default())
}

/// Exhaustive over all-odd tuples when `w <= 16` and there are at most
/// 2^30 of them; otherwise samples `sampling.samples` random odd tuples.
pub fn analyze_with(op: &Operator, sampling: &SampleOptions) -> SafetyReport {
    let width = op.width();
    let arity = op.arity();

    let zeros = vec![0; arity];
    let k0 = op.apply(&zeros);
    let condition_zero = ConditionCheck {
        passed: k0 == 0,
        violation: (k0 != 0).then_some(Violation {
            inputs: zeros,
            output: k0,
        }),
    };

    let odd_bits = u64::from(width.bits() - 1) * arity as u64;
    let exhaustive = width.bits() <= 16 && odd_bits <= MAX_EXHAUSTIVE_ODD_TUPLES.trailing_zeros() as u64;
    let (violation, odd_coverage) = if exhaustive {
        (first_odd_violation(op), Coverage::Exhaustive { inputs: 1 << odd_bits })
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
        let mut least: Option<Violation> = None;
        let mut t = vec![0u64; arity];
        for _ in 0..sampling.samples {
            t.iter_mut()
                .for_each(|v| *v = (rng.random::<u64>() & width.mask()) | 1);
            let out = op.apply(&t);
            if out & 1 == 0 && least.as_ref().is_none_or(|l| t < l.inputs) {
                least = Some(Violation {
                    inputs: t.clone(),
                    output: out,
                });
            }
        }
        (
            least,
            Coverage::Sampled {
                count: sampling.samples,
                seed: sampling.seed,
            },
        )
    };
    let condition_odd = ConditionCheck {
        passed: violation.is_none(),
        violation,
    };
    let verdict = if condition_zero.passed && condition_odd.passed {
        Verdict::Safe
    } else {
        Verdict::Unsafe
    };
    SafetyReport {
        op_name: op.name().to_string(),
        width: width.bits(),
        arity,
        condition_zero,
        condition_odd,
        odd_coverage,
        verdict,
    }
}

/// Lexicographically least all-odd tuple with an even output.
fn first_odd_violation(op: &Operator) -> Option<Violation> {
    let top = op.width().mask();
    let mut t = vec![1u64; op.arity()];
    loop {
        let out = op.apply(&t);
        if out & 1 == 0 {
            return Some(Violation {
                inputs: t,
                output: out,
            });
        }
        let mut j = t.len();
        loop {
            if j == 0 {
                return None;
            }
            j -= 1;
            if t[j] < top {
                t[j] += 2;
                break;
            }
            t[j] = 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patched {
    pub op: Operator,
    /// Entries that differ from the input table, zero point included.
    pub changed_entries: usize,
    pub zero_point_forced: bool,
}

/// Forces f(0, ..., 0) = 0 and adds 1 at every all-odd tuple with an even output.
pub fn patch(op: &Operator) -> Result<Patched> {
    let dense = op.tabulate()?;
    let width = op.width();
    let arity = op.arity();
    let mut table = dense.table().expect("tabulated").to_vec();
    let mut changed = 0;
    let mut zero_forced = false;
    for (j, entry) in table.iter_mut().enumerate() {
        let t = decode_tuple(width, arity, j as u64);
        if j == 0 && *entry != 0 {
            *entry = 0;
            zero_forced = true;
            changed += 1;
        } else if t.iter().all(|v| v & 1 == 1) && *entry & 1 == 0 {
            *entry = width.reduce(u64::from(*entry) + 1) as u32;
            changed += 1;
        }
    }
    Ok(Patched {
        op: Operator::from_table(format!("{}_patched", op.name()), width, arity, table)?,
        changed_entries: changed,
        zero_point_forced: zero_forced,
    })
}

/// Pointwise `test(t) != 0 ? then_op(t) : else_op(t)`.
pub fn patchwork(test: &Operator, then_op: &Operator, else_op: &Operator) -> Result<Operator> {
    let shape = (test.width(), test.arity());
    for op in [then_op, else_op] {
        if (op.width(), op.arity()) != shape {
            return Err(Error::usage(format!(
                "patchwork operands disagree in shape: {test} (arity {}) vs {op} (arity {})",
                test.arity(),
                op.arity()
            )));
        }
    }
    let (then_op, else_op) = (then_op.tabulate()?, else_op.tabulate()?);
    Operator::from_fn(
        format!("ite_{}_{}_{}", test.name(), then_op.name(), else_op.name()),
        shape.0,
        shape.1,
        |t| {
            if test.apply(t) != 0 {
                then_op.apply(t)
            } else {
                else_op.apply(t)
            }
        },
    )
}

/// An odd residue, invertible mod 2^w.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OddScalar(u64);

impl OddScalar {
    pub fn new(n: u64, width: Width) -> Result<Self> {
        if n & 1 == 0 || n > width.mask() {
            return Err(Error::domain(format!("{n} is not an odd residue mod 2^{width}")));
        }
        Ok(OddScalar(n))
    }

    /// The `n` with `n * x ≡ y (mod 2^w)`, for odd `x` and `y`.
    pub fn ratio(y: u64, x: u64, width: Width) -> Result<Self> {
        let x = OddScalar::new(x, width)?;
        OddScalar::new(y, width)?;
        Ok(OddScalar(width.reduce(y.wrapping_mul(x.inverse(width)))))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Newton iteration; each step doubles the number of correct low bits.
    pub fn inverse(self, width: Width) -> u64 {
        let x = self.0;
        let mut inv = x;
        for _ in 0..6 {
            inv = inv.wrapping_mul(2u64.wrapping_sub(x.wrapping_mul(inv)));
        }
        width.reduce(inv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessKind {
    ConstantFormula,
    /// Two-input computation; constant whenever the inputs have opposite parity.
    ParityCoverageComputation,
}

/// Which branch of the zero-point construction applied, in terms of
/// k0 = f(0, ..., 0) and k1 = f(1, ..., 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroCase {
    /// k1 = k0: h(x) = f(g(x), ..., g(x)) is already constant.
    Equal,
    BothOdd,
    BothEven,
    MixedParity,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Derivation {
    pub k0: Option<u64>,
    pub k1: Option<u64>,
    pub zero_case: Option<ZeroCase>,
    /// All-odd tuple (x1, y1, ...) with its even output z0.
    pub odd_violation: Option<Violation>,
    /// n_j with x_j = n_j * x_1 (mod 2^w).
    pub odd_scalars: Vec<OddScalar>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub op_name: String,
    /// Name the target operator carries inside `formula`.
    pub target_name: String,
    pub width: u32,
    pub kind: WitnessKind,
    pub formula: Formula,
    pub claimed_constant: u64,
    pub derivation: Derivation,
    pub verification: Coverage,
}

/// The operators a witness formula refers to: the target plus the helpers.
pub fn witness_opset(op: &Operator) -> Result<(OpSet, String)> {
    let mut ops = OpSet::builtins(op.width(), &HELPERS)?;
    let target = if HELPERS.contains(&op.name()) {
        "f".to_string()
    } else {
        op.name().to_string()
    };
    ops.insert(op.clone().with_name(target.clone())?)?;
    Ok((ops, target))
}

fn g(node: Node) -> Node {
    Node::apply("parity_collapse", vec![node])
}

/// Builds and checks a witness for whichever condition fails first.
pub fn witness(op: &Operator, sampling: &SampleOptions) -> Result<Witness> {
    let report = analyze_with(op, sampling);
    if !report.condition_zero.passed {
        zero_witness(op, sampling)
    } else if let Some(v) = report.condition_odd.violation {
        odd_witness(op, v, sampling)
    } else {
        Err(Error::domain(format!(
            "{op} satisfies both conditions; no constant-producing formula exists"
        )))
    }
}

pub fn witness_zero_violation(op: &Operator) -> Result<Witness> {
    zero_witness(op, &SampleOptions::default())
}

pub fn witness_odd_violation(op: &Operator) -> Result<Witness> {
    let sampling = SampleOptions::default();
    let report = analyze_with(op, &sampling);
    if !report.condition_zero.passed {
        return Err(Error::domain(format!(
            "{op} violates the zero condition; use the zero-point witness"
        )));
    }
    let violation = report.condition_odd.violation.ok_or_else(|| {
        Error::domain(format!("{op} maps every all-odd tuple to an odd value"))
    })?;
    odd_witness(op, violation, &sampling)
}

fn zero_witness(op: &Operator, sampling: &SampleOptions) -> Result<Witness> {
    let arity = op.arity();
    let k0 = op.apply(&vec![0; arity]);
    if k0 == 0 {
        return Err(Error::domain(format!("{op} maps the zero tuple to 0")));
    }
    let k1 = op.apply(&vec![1; arity]);
    let (ops, target) = witness_opset(op)?;
    let h = |var: &str| Node::apply(target.as_str(), vec![g(Node::var(var)); arity]);

    let (case, kind, root, vars, constant) = match (k0 == k1, k0 & 1, k1 & 1) {
        (true, _, _) => (ZeroCase::Equal, WitnessKind::ConstantFormula, h("x"), 1, k0),
        (false, 1, 1) => (ZeroCase::BothOdd, WitnessKind::ConstantFormula, g(h("x")), 1, 1),
        (false, 0, 0) => (ZeroCase::BothEven, WitnessKind::ConstantFormula, g(h("x")), 1, 0),
        _ => (
            ZeroCase::MixedParity,
            WitnessKind::ParityCoverageComputation,
            g(Node::apply("mul", vec![h("x"), h("y")])),
            2,
            0,
        ),
    };
    let formula = Formula::with_vars(crate::expr::default_var_names(vars), root)?;
    let derivation = Derivation {
        k0: Some(k0),
        k1: Some(k1),
        zero_case: Some(case),
        ..Derivation::default()
    };
    finish(op, &ops, target, kind, formula, constant, derivation, sampling)
}

fn odd_witness(op: &Operator, violation: Violation, sampling: &SampleOptions) -> Result<Witness> {
    let width = op.width();
    let (ops, target) = witness_opset(op)?;
    let gx = g(Node::var("x"));
    let args = violation
        .inputs
        .iter()
        .map(|&xj| {
            if xj <= CHAIN_SCALAR_MAX {
                scalar_mul_node(xj, &gx, width)
            } else {
                indicator_scalar_node(xj, &gx, width)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let odd_scalars = violation
        .inputs
        .iter()
        .map(|&xj| OddScalar::ratio(xj, violation.inputs[0], width))
        .collect::<Result<Vec<_>>>()?;
    let formula = Formula::from_root(g(Node::apply(target.as_str(), args)));
    let derivation = Derivation {
        k0: Some(0),
        odd_violation: Some(violation),
        odd_scalars,
        ..Derivation::default()
    };
    finish(op, &ops, target, WitnessKind::ConstantFormula, formula, 0, derivation, sampling)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    op: &Operator,
    ops: &OpSet,
    target_name: String,
    kind: WitnessKind,
    formula: Formula,
    claimed_constant: u64,
    derivation: Derivation,
    sampling: &SampleOptions,
) -> Result<Witness> {
    let verification = match kind {
        WitnessKind::ConstantFormula => match is_constant(&formula, ops, sampling)? {
            Some(found) if found.constant == claimed_constant => found.coverage,
            _ => {
                return Err(Error::domain(format!(
                    "witness `{formula}` for {op} failed verification"
                )))
            }
        },
        WitnessKind::ParityCoverageComputation => {
            verify_parity_coverage(&formula, ops, claimed_constant, sampling).ok_or_else(|| {
                Error::domain(format!("witness `{formula}` for {op} failed verification"))
            })?
        }
    };
    Ok(Witness {
        op_name: op.name().to_string(),
        target_name,
        width: op.width().bits(),
        kind,
        formula,
        claimed_constant,
        derivation,
        verification,
    })
}

/// Checks a two-input computation over every (x, y) of opposite parity, or a
/// seeded sample of them when the space is large.
pub fn verify_parity_coverage(
    formula: &Formula,
    ops: &OpSet,
    constant: u64,
    sampling: &SampleOptions,
) -> Option<Coverage> {
    let compiled = formula.compile(ops).ok()?;
    if compiled.vars() != 2 {
        return None;
    }
    let width = ops.width();
    let mut stack = Vec::new();
    if 2 * width.bits() <= EXHAUSTIVE_INPUT_BITS {
        let mut inputs = 0;
        for x in 0..width.modulus() {
            for y in ((x & 1) ^ 1..width.modulus()).step_by(2) {
                if compiled.eval_with(&[x, y], &mut stack) != constant {
                    return None;
                }
                inputs += 1;
            }
        }
        Some(Coverage::Exhaustive { inputs })
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
        for _ in 0..sampling.samples {
            let x = rng.random::<u64>() & width.mask();
            let y = (rng.random::<u64>() & width.mask() & !1) | ((x & 1) ^ 1);
            if compiled.eval_with(&[x, y], &mut stack) != constant {
                return None;
            }
        }
        Some(Coverage::Sampled {
            count: sampling.samples,
            seed: sampling.seed,
        })
    }
}

/// Re-derives the condition verdicts straight from the definition, with no
/// shortcuts: every tuple of the input space is visited.
pub fn conditions_by_full_scan(op: &Operator) -> (bool, bool) {
    let width = op.width();
    let arity = op.arity();
    let mut zero_ok = true;
    let mut odd_ok = true;
    for t in crate::optable::input_tuples(width, arity) {
        let out = op.apply(&t);
        if t.iter().all(|&v| v == 0) && out != 0 {
            zero_ok = false;
        }
        if t.iter().all(|&v| v & 1 == 1) && out & 1 == 0 {
            odd_ok = false;
        }
    }
    (zero_ok, odd_ok)
}
