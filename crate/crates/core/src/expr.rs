//! Literal-free formulas over named operators.
//!
//! Text form is an s-expression: `formula := var | "(" opname formula+ ")"`,
//! with identifiers matching `[a-z][a-z0-9_]*`. Numeric literals are
//! rejected by the parser: an attacker holds no encrypted constants.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::closure::FunctionVector;
use crate::error::{Error, Result};
use crate::optable::{OpSet, Operator, Width};

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_SAMPLES: u64 = 1_000_000;
/// Exhaustive evaluation is used while `width * vars` stays at or below this.
pub const EXHAUSTIVE_INPUT_BITS: u32 = 20;

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
}

/// Variable names for a `k`-variable search or closure: x, y, z, then v3, v4, ...
pub fn default_var_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| match i {
            0 => "x".to_string(),
            1 => "y".to_string(),
            2 => "z".to_string(),
            _ => format!("v{i}"),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Var(String),
    Apply { op: String, args: Vec<Node> },
}

impl Node {
    pub fn var(name: impl Into<String>) -> Self {
        Node::Var(name.into())
    }

    pub fn apply(op: impl Into<String>, args: Vec<Node>) -> Self {
        Node::Apply {
            op: op.into(),
            args,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Node::Var(_) => 1,
            Node::Apply { args, .. } => 1 + args.iter().map(Node::node_count).sum::<usize>(),
        }
    }

    fn op_count(&self) -> usize {
        match self {
            Node::Var(_) => 0,
            Node::Apply { args, .. } => 1 + args.iter().map(Node::op_count).sum::<usize>(),
        }
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Node::Var(v) => {
                if !out.contains(&v.as_str()) {
                    out.push(v);
                }
            }
            Node::Apply { args, .. } => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Var(v) => f.write_str(v),
            Node::Apply { op, args } => {
                write!(f, "({op}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A formula together with its ordered variable list.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Formula {
    vars: Vec<String>,
    root: Node,
}

impl Formula {
    /// Variables are taken in order of first appearance.
    pub fn from_root(root: Node) -> Self {
        let mut vars = Vec::new();
        root.collect_vars(&mut vars);
        let vars = vars.into_iter().map(String::from).collect();
        Formula { vars, root }
    }

    /// Declares the variable list explicitly; it may include unused variables.
    pub fn with_vars(vars: Vec<String>, root: Node) -> Result<Self> {
        for (i, v) in vars.iter().enumerate() {
            if !is_identifier(v) {
                return Err(Error::usage(format!("`{v}` is not a valid variable name")));
            }
            if vars[..i].contains(v) {
                return Err(Error::usage(format!("variable `{v}` declared twice")));
            }
        }
        let mut used = Vec::new();
        root.collect_vars(&mut used);
        if let Some(v) = used.iter().find(|u| !vars.iter().any(|d| d == *u)) {
            return Err(Error::usage(format!("variable `{v}` is not declared")));
        }
        Ok(Formula { vars, root })
    }

    /// Syntax-only parse; operator names are not resolved.
    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text, None).formula()
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    /// Number of operator applications.
    pub fn op_count(&self) -> usize {
        self.root.op_count()
    }

    /// Checks operator names and arities against `ops`.
    pub fn check(&self, ops: &OpSet) -> Result<()> {
        self.compile(ops).map(|_| ())
    }

    pub fn compile(&self, ops: &OpSet) -> Result<Compiled> {
        let mut program = Vec::with_capacity(self.node_count());
        let mut depth = 0;
        let mut max_depth = 0;
        self.emit(&self.root, ops, &mut program, &mut depth, &mut max_depth)?;
        Ok(Compiled {
            width: ops.width(),
            vars: self.vars.len(),
            program,
            max_depth,
        })
    }

    fn emit(
        &self,
        node: &Node,
        ops: &OpSet,
        program: &mut Vec<Instr>,
        depth: &mut usize,
        max_depth: &mut usize,
    ) -> Result<()> {
        match node {
            Node::Var(v) => {
                let idx = self
                    .vars
                    .iter()
                    .position(|d| d == v)
                    .ok_or_else(|| Error::usage(format!("unbound variable `{v}`")))?;
                program.push(Instr::Var(idx));
                *depth += 1;
                *max_depth = (*max_depth).max(*depth);
            }
            Node::Apply { op, args } => {
                let resolved = ops
                    .get(op)
                    .ok_or_else(|| Error::usage(format!("unknown operator `{op}`")))?;
                if resolved.arity() != args.len() {
                    return Err(Error::usage(format!(
                        "`{op}` takes {} arguments, got {}",
                        resolved.arity(),
                        args.len()
                    )));
                }
                for a in args {
                    self.emit(a, ops, program, depth, max_depth)?;
                }
                program.push(Instr::Op(Arc::clone(resolved)));
                *depth = *depth + 1 - args.len();
            }
        }
        Ok(())
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl Serialize for Formula {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Formula::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Parses and resolves operator names and arities against `ops`.
pub fn parse_formula(text: &str, ops: &OpSet) -> Result<Formula> {
    Parser::new(text, Some(ops)).formula()
}

pub fn print_formula(f: &Formula) -> String {
    f.to_string()
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
    ops: Option<&'a OpSet>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, ops: Option<&'a OpSet>) -> Self {
        Parser { text, pos: 0, ops }
    }

    fn err(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::parse(format!("offset {at}"), msg)
    }

    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn formula(mut self) -> Result<Formula> {
        let root = self.node()?;
        self.skip_ws();
        if self.pos != self.text.len() {
            return Err(self.err(self.pos, "trailing input after formula"));
        }
        Ok(Formula::from_root(root))
    }

    fn word(&mut self) -> (usize, &'a str) {
        let start = self.pos;
        let rest = &self.text[start..];
        let end = rest
            .find(|c: char| c.is_whitespace() || c == '(' || c == ')')
            .unwrap_or(rest.len());
        self.pos += end;
        (start, &rest[..end])
    }

    fn identifier(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let (start, word) = self.word();
        if word.is_empty() {
            return Err(self.err(start, format!("expected {what}")));
        }
        if word.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+') {
            return Err(self.err(start, format!("literal `{word}` rejected: formulas have no constants")));
        }
        if !is_identifier(word) {
            return Err(self.err(start, format!("`{word}` is not a valid {what}")));
        }
        Ok((start, word))
    }

    fn node(&mut self) -> Result<Node> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.err(self.pos, "unexpected end of input")),
            Some(')') => Err(self.err(self.pos, "unexpected `)`")),
            Some('(') => {
                let open = self.pos;
                self.pos += 1;
                self.skip_ws();
                let (op_at, op) = self.identifier("operator name")?;
                let mut args = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        Some(')') => {
                            self.pos += 1;
                            break;
                        }
                        None => return Err(self.err(open, "unclosed `(`")),
                        Some(_) => args.push(self.node()?),
                    }
                }
                if args.is_empty() {
                    return Err(self.err(open, format!("`{op}` applied to no arguments")));
                }
                if let Some(ops) = self.ops {
                    let resolved = ops
                        .get(op)
                        .ok_or_else(|| self.err(op_at, format!("unknown operator `{op}`")))?;
                    if resolved.arity() != args.len() {
                        return Err(self.err(
                            open,
                            format!(
                                "arity error: `{op}` takes {} arguments, got {}",
                                resolved.arity(),
                                args.len()
                            ),
                        ));
                    }
                }
                Ok(Node::apply(op, args))
            }
            Some(_) => {
                let (_, name) = self.identifier("variable name")?;
                Ok(Node::var(name))
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Instr {
    Var(usize),
    Op(Arc<Operator>),
}

/// Postfix program for repeated evaluation of one formula.
#[derive(Debug, Clone)]
pub struct Compiled {
    width: Width,
    vars: usize,
    program: Vec<Instr>,
    max_depth: usize,
}

impl Compiled {
    pub fn width(&self) -> Width {
        self.width
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    /// Values are given in the formula's variable order and must be reduced.
    pub fn eval(&self, assignment: &[u64]) -> u64 {
        let mut stack = Vec::with_capacity(self.max_depth);
        self.eval_with(assignment, &mut stack)
    }

    pub fn eval_with(&self, assignment: &[u64], stack: &mut Vec<u64>) -> u64 {
        debug_assert_eq!(assignment.len(), self.vars);
        stack.clear();
        for instr in &self.program {
            match instr {
                Instr::Var(i) => stack.push(assignment[*i]),
                Instr::Op(op) => {
                    let base = stack.len() - op.arity();
                    let v = op.apply(&stack[base..]);
                    stack.truncate(base);
                    stack.push(v);
                }
            }
        }
        stack[0]
    }

    /// Full output table; assignment `i` puts variable `j` at bits `w*j..w*(j+1)`.
    pub fn function_vector(&self) -> Result<FunctionVector> {
        let len = FunctionVector::len_for(self.width, self.vars)?;
        let mut stack = Vec::with_capacity(self.max_depth);
        let mut assignment = vec![0u64; self.vars];
        let outputs = (0..len as u64)
            .map(|i| {
                FunctionVector::decode_assignment_into(self.width, i, &mut assignment);
                self.eval_with(&assignment, &mut stack) as u32
            })
            .collect();
        FunctionVector::new(self.width, self.vars, outputs)
    }
}

/// Evaluates with a name-keyed assignment.
pub fn eval_formula(f: &Formula, ops: &OpSet, assignment: &HashMap<String, u64>) -> Result<u64> {
    let compiled = f.compile(ops)?;
    let width = ops.width();
    let values = f
        .vars()
        .iter()
        .map(|v| {
            let value = *assignment
                .get(v)
                .ok_or_else(|| Error::usage(format!("unbound variable `{v}`")))?;
            if value > width.mask() {
                return Err(Error::usage(format!(
                    "value {value} for `{v}` out of range for width {width}"
                )));
            }
            Ok(value)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(compiled.eval(&values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Coverage {
    Exhaustive { inputs: u64 },
    Sampled { count: u64, seed: u64 },
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coverage::Exhaustive { inputs } => write!(f, "exhaustive ({inputs}/{inputs})"),
            Coverage::Sampled { count, seed } => write!(f, "sampled ({count} inputs, seed {seed})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstantFinding {
    pub formula: Formula,
    pub constant: u64,
    pub coverage: Coverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOptions {
    pub seed: u64,
    pub samples: u64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            seed: DEFAULT_SEED,
            samples: DEFAULT_SAMPLES,
        }
    }
}

/// `Some(finding)` iff every evaluated assignment gives the same output.
pub fn is_constant(
    f: &Formula,
    ops: &OpSet,
    sampling: &SampleOptions,
) -> Result<Option<ConstantFinding>> {
    let compiled = f.compile(ops)?;
    let width = ops.width();
    let k = f.vars().len();
    let mut stack = Vec::new();
    let mut assignment = vec![0u64; k];

    let input_bits = width.bits() as usize * k;
    let (constant, coverage) = if input_bits <= EXHAUSTIVE_INPUT_BITS as usize {
        let inputs = 1u64 << input_bits;
        let first = compiled.eval_with(&assignment, &mut stack);
        for i in 1..inputs {
            FunctionVector::decode_assignment_into(width, i, &mut assignment);
            if compiled.eval_with(&assignment, &mut stack) != first {
                return Ok(None);
            }
        }
        (first, Coverage::Exhaustive { inputs })
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
        let mut first = None;
        for _ in 0..sampling.samples {
            assignment
                .iter_mut()
                .for_each(|v| *v = rng.random::<u64>() & width.mask());
            let out = compiled.eval_with(&assignment, &mut stack);
            match first {
                None => first = Some(out),
                Some(c) if c != out => return Ok(None),
                Some(_) => {}
            }
        }
        let Some(first) = first else {
            return Err(Error::usage("sampled constancy check needs at least one sample"));
        };
        (
            first,
            Coverage::Sampled {
                count: sampling.samples,
                seed: sampling.seed,
            },
        )
    };
    Ok(Some(ConstantFinding {
        formula: f.clone(),
        constant,
        coverage,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchLimits {
    /// Abort once this many distinct functions have been seen.
    pub max_functions: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits {
            max_functions: 1 << 22,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchOutcome {
    pub findings: Vec<ConstantFinding>,
    /// False when a resource bound cut the search short.
    pub complete: bool,
    pub distinct_functions: usize,
    /// Largest formula size (node count) fully enumerated.
    pub max_nodes_reached: usize,
}

struct Entry {
    outputs: Box<[u32]>,
    node: Node,
}

/// Enumerates formulas over `ops` and `vars` unknowns by node count, keeping
/// only the first formula seen for each function, and reports every
/// constant function reached.
///
/// With `max_nodes = None` the search runs until the set of reached
/// functions is closed under `ops`.
pub fn search_constants(
    ops: &OpSet,
    vars: usize,
    max_nodes: Option<usize>,
    limits: &SearchLimits,
) -> Result<SearchOutcome> {
    let width = ops.width();
    if vars == 0 {
        return Err(Error::usage("search needs at least one variable"));
    }
    if width.bits() as usize * vars > EXHAUSTIVE_INPUT_BITS as usize {
        return Err(Error::usage(format!(
            "search needs width * vars <= {EXHAUSTIVE_INPUT_BITS}"
        )));
    }
    let names = default_var_names(vars);
    let len = FunctionVector::len_for(width, vars)?;
    let ops: Vec<Arc<Operator>> = ops
        .iter()
        .map(|op| match op.tabulate() {
            Ok(dense) => Arc::new(dense),
            Err(_) => Arc::clone(op),
        })
        .collect();

    let mut seen: FxHashSet<Box<[u32]>> = FxHashSet::default();
    let mut levels: Vec<Vec<Entry>> = vec![Vec::new(), Vec::new()];
    let mut findings = Vec::new();
    let mut record = |outputs: Vec<u32>,
                      node: &dyn Fn() -> Node,
                      seen: &mut FxHashSet<Box<[u32]>>,
                      level: &mut Vec<Entry>|
     -> Option<()> {
        if seen.contains(outputs.as_slice()) {
            return Some(());
        }
        let outputs = outputs.into_boxed_slice();
        seen.insert(outputs.clone());
        let node = node();
        if outputs.iter().all(|&v| v == outputs[0]) {
            findings.push(ConstantFinding {
                formula: Formula::with_vars(names.clone(), node.clone()).expect("declared vars"),
                constant: u64::from(outputs[0]),
                coverage: Coverage::Exhaustive { inputs: len as u64 },
            });
        }
        level.push(Entry { outputs, node });
        (seen.len() <= limits.max_functions).then_some(())
    };

    for (j, name) in names.iter().enumerate() {
        let outputs = FunctionVector::projection(width, vars, j)?.outputs().to_vec();
        let mut level = std::mem::take(&mut levels[1]);
        record(outputs, &|| Node::var(name), &mut seen, &mut level);
        levels[1] = level;
    }

    let mut size = 1;
    let mut complete = true;
    let mut args = Vec::with_capacity(3);
    'sizes: loop {
        if max_nodes.is_some_and(|m| size >= m) {
            break;
        }
        let n = size + 1;
        let mut level = Vec::new();
        for op in &ops {
            let arity = op.arity();
            for parts in compositions(n - 1, arity) {
                if parts.iter().any(|&p| levels[p].is_empty()) {
                    continue;
                }
                let mut idx = vec![0usize; arity];
                loop {
                    let children: Vec<&Entry> =
                        (0..arity).map(|j| &levels[parts[j]][idx[j]]).collect();
                    let outputs: Vec<u32> = (0..len)
                        .map(|i| {
                            args.clear();
                            args.extend(children.iter().map(|c| u64::from(c.outputs[i])));
                            op.apply(&args) as u32
                        })
                        .collect();
                    let build = || {
                        Node::apply(op.name(), children.iter().map(|c| c.node.clone()).collect())
                    };
                    if record(outputs, &build, &mut seen, &mut level).is_none() {
                        complete = false;
                        levels.push(level);
                        break 'sizes;
                    }
                    if !advance(&mut idx, |j| levels[parts[j]].len()) {
                        break;
                    }
                }
            }
        }
        let grew = !level.is_empty();
        levels.push(level);
        size = n;
        if max_nodes.is_none() && !grew && is_closed(&ops, &levels, &seen, len) {
            break;
        }
    }

    Ok(SearchOutcome {
        findings,
        complete,
        distinct_functions: seen.len(),
        max_nodes_reached: size,
    })
}

/// Positive compositions of `total` into `parts` parts, lexicographic.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    fn go(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            if total >= 1 {
                prefix.push(total);
                out.push(prefix.clone());
                prefix.pop();
            }
            return;
        }
        for first in 1..total {
            prefix.push(first);
            go(total - first, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(total, parts, &mut Vec::new(), &mut out);
    out
}

/// Odometer increment, last position fastest. False on wraparound.
fn advance(idx: &mut [usize], bound: impl Fn(usize) -> usize) -> bool {
    for j in (0..idx.len()).rev() {
        idx[j] += 1;
        if idx[j] < bound(j) {
            return true;
        }
        idx[j] = 0;
    }
    false
}

fn is_closed(
    ops: &[Arc<Operator>],
    levels: &[Vec<Entry>],
    seen: &FxHashSet<Box<[u32]>>,
    len: usize,
) -> bool {
    let all: Vec<&[u32]> = levels.iter().flatten().map(|e| &*e.outputs).collect();
    let mut args = Vec::with_capacity(3);
    let mut out = vec![0u32; len];
    for op in ops {
        let arity = op.arity();
        let mut idx = vec![0usize; arity];
        loop {
            for (i, o) in out.iter_mut().enumerate() {
                args.clear();
                args.extend(idx.iter().map(|&m| u64::from(all[m][i])));
                *o = op.apply(&args) as u32;
            }
            if !seen.contains(out.as_slice()) {
                return false;
            }
            if !advance(&mut idx, |_| all.len()) {
                break;
            }
        }
    }
    true
}

/// Rewrites each `(parity_collapse t)` into `width` nested `mul` squarings of `t`.
/// The result grows by a factor of `2^width` per occurrence.
pub fn expand_parity_collapse(f: &Formula, width: Width) -> Formula {
    fn go(node: &Node, width: Width) -> Node {
        match node {
            Node::Var(_) => node.clone(),
            Node::Apply { op, args } => {
                let args: Vec<Node> = args.iter().map(|a| go(a, width)).collect();
                if op == "parity_collapse" && args.len() == 1 {
                    (0..width.bits()).fold(args[0].clone(), |acc, _| {
                        Node::apply("mul", vec![acc.clone(), acc])
                    })
                } else {
                    Node::apply(op.clone(), args)
                }
            }
        }
    }
    Formula {
        vars: f.vars.clone(),
        root: go(&f.root, width),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(bits: u32) -> Width {
        Width::new(bits).unwrap()
    }

    fn set(bits: u32, names: &[&str]) -> OpSet {
        OpSet::builtins(w(bits), names).unwrap()
    }

    fn eval1(text: &str, ops: &OpSet, values: &[(&str, u64)]) -> u64 {
        let f = parse_formula(text, ops).unwrap();
        let assignment = values.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        eval_formula(&f, ops, &assignment).unwrap()
    }

    #[test]
    fn eval_examples() {
        let w2 = set(2, &["mul", "add3"]);
        let w4 = set(4, &["mul", "add3"]);
        assert_eq!(eval1("(mul x x)", &w2, &[("x", 3)]), 1);
        assert_eq!(eval1("(add3 x y z)", &w4, &[("x", 1), ("y", 1), ("z", 1)]), 3);
        assert_eq!(eval1("(mul x (add3 x x x))", &w4, &[("x", 1)]), 3);
    }

    #[test]
    fn eval_errors() {
        let ops = set(4, &["mul"]);
        let f = Formula::parse("(mul x y)").unwrap();
        let only_x: HashMap<String, u64> = [("x".to_string(), 1)].into();
        assert!(matches!(eval_formula(&f, &ops, &only_x), Err(Error::Usage(_))));
        let g = Formula::parse("(add3 x x x)").unwrap();
        assert!(matches!(eval_formula(&g, &ops, &only_x), Err(Error::Usage(_))));
    }

    #[test]
    fn parse_examples() {
        let ops = set(8, &["mul", "add3"]);
        let f = parse_formula("(mul x (add3 x y z))", &ops).unwrap();
        assert_eq!(f.to_string(), "(mul x (add3 x y z))");
        assert_eq!(f.vars(), ["x", "y", "z"]);

        let arity = parse_formula("(mul x)", &ops).unwrap_err();
        assert!(arity.to_string().contains("arity"), "{arity}");
        let literal = parse_formula("(mul x 3)", &ops).unwrap_err();
        assert!(literal.to_string().contains("literal"), "{literal}");
        assert!(matches!(literal, Error::Parse { ref location, .. } if location == "offset 7"));
    }

    #[test]
    fn parse_syntax_errors() {
        for bad in ["", "(", "(mul x y", ")", "(mul x y))", "(mul)", "X", "(Mul x y)", "()"] {
            assert!(
                matches!(Formula::parse(bad), Err(Error::Parse { .. })),
                "accepted {bad:?}"
            );
        }
        let ops = set(8, &["mul"]);
        assert!(parse_formula("(div x y)", &ops).is_err());
        assert_eq!(Formula::parse("  (f  a\n b_1 )  ").unwrap().to_string(), "(f a b_1)");
    }

    #[test]
    fn declared_vars() {
        let root = Node::apply("mul", vec![Node::var("x"), Node::var("x")]);
        let f = Formula::with_vars(vec!["x".into(), "y".into()], root.clone()).unwrap();
        assert_eq!(f.vars().len(), 2);
        assert!(Formula::with_vars(vec!["y".into()], root.clone()).is_err());
        assert!(Formula::with_vars(vec!["x".into(), "x".into()], root).is_err());
    }

    #[test]
    fn is_constant_examples() {
        let ops = set(2, &["mul", "add3"]);
        let sampling = SampleOptions::default();
        let triple = Formula::parse("(add3 x x x)").unwrap();
        assert_eq!(is_constant(&triple, &ops, &sampling).unwrap(), None);

        // x^(2^2): 0 on evens, 1 on odds
        let collapse = Formula::parse("(mul (mul x x) (mul x x))").unwrap();
        assert_eq!(is_constant(&collapse, &ops, &sampling).unwrap(), None);

        let add2 = set(2, &["add2"]);
        let four_x = Formula::parse("(add2 (add2 x x) (add2 x x))").unwrap();
        let found = is_constant(&four_x, &add2, &sampling).unwrap().unwrap();
        assert_eq!(found.constant, 0);
        assert_eq!(found.coverage, Coverage::Exhaustive { inputs: 4 });
    }

    #[test]
    fn is_constant_samples_wide_inputs() {
        let ops = set(32, &["add2", "mul"]);
        let sampling = SampleOptions { seed: 7, samples: 1000 };
        // wide inputs fall back to sampling
        let f = Formula::parse("(mul x y)").unwrap();
        assert_eq!(is_constant(&f, &ops, &sampling).unwrap(), None);
        let g = Formula::parse("x").unwrap();
        assert_eq!(is_constant(&g, &ops, &sampling).unwrap(), None);
    }

    #[test]
    fn function_vector_packs_x_low() {
        let ops = set(2, &["mul"]);
        let y = Formula::with_vars(vec!["x".into(), "y".into()], Node::var("y")).unwrap();
        let fv = y.compile(&ops).unwrap().function_vector().unwrap();
        assert_eq!(fv.outputs()[..8], [0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn search_mul_add3_is_empty() {
        for bits in 1..=3 {
            for k in 1..=2 {
                let ops = set(bits, &["mul", "add3"]);
                let out = search_constants(&ops, k, Some(9), &SearchLimits::default()).unwrap();
                assert!(out.complete);
                assert!(out.findings.is_empty(), "w={bits} k={k}: {:?}", out.findings);
            }
        }
    }

    #[test]
    fn search_mul_add2_finds_zero() {
        let ops = set(2, &["mul", "add2"]);
        let out = search_constants(&ops, 1, None, &SearchLimits::default()).unwrap();
        assert!(out.complete);
        assert!(!out.findings.is_empty());
        for f in &out.findings {
            let again = is_constant(&f.formula, &ops, &SampleOptions::default()).unwrap();
            assert_eq!(again.map(|c| c.constant), Some(f.constant));
        }
        // polynomials with no constant term on Z/4: 16 unary functions
        assert_eq!(out.distinct_functions, 16);
    }

    #[test]
    fn search_with_division_finds_constants() {
        let ops = set(2, &["div_classical", "mul", "add3"]);
        let out = search_constants(&ops, 1, None, &SearchLimits::default()).unwrap();
        assert!(out.complete);
        assert!(!out.findings.is_empty());
    }

    #[test]
    fn search_respects_function_bound() {
        let ops = set(2, &["mul", "add2"]);
        let limits = SearchLimits { max_functions: 20 };
        let out = search_constants(&ops, 2, Some(13), &limits).unwrap();
        assert!(!out.complete);
    }

    /// Every formula up to `n` nodes, without deduplication.
    fn all_vectors(ops: &OpSet, vars: usize, n: usize) -> FxHashSet<Vec<u32>> {
        let width = ops.width();
        let len = FunctionVector::len_for(width, vars).unwrap();
        let mut by_size: Vec<Vec<Vec<u32>>> = vec![Vec::new(); n + 1];
        for j in 0..vars {
            by_size[1].push(FunctionVector::projection(width, vars, j).unwrap().outputs().to_vec());
        }
        for size in 2..=n {
            let mut level = Vec::new();
            for op in ops.iter() {
                for parts in compositions(size - 1, op.arity()) {
                    let mut idx = vec![0; op.arity()];
                    if parts.iter().any(|&p| by_size[p].is_empty()) {
                        continue;
                    }
                    loop {
                        let v: Vec<u32> = (0..len)
                            .map(|i| {
                                let args: Vec<u64> = (0..op.arity())
                                    .map(|j| u64::from(by_size[parts[j]][idx[j]][i]))
                                    .collect();
                                op.apply(&args) as u32
                            })
                            .collect();
                        level.push(v);
                        if !advance(&mut idx, |j| by_size[parts[j]].len()) {
                            break;
                        }
                    }
                }
            }
            by_size[size] = level;
        }
        by_size.into_iter().flatten().collect()
    }

    #[test]
    fn dedup_preserves_reachable_functions() {
        for (bits, names, vars, n) in [
            (2, &["mul", "add2"][..], 1, 7),
            (2, &["mul", "add3"][..], 2, 7),
            (1, &["add2", "mul"][..], 2, 7),
            (3, &["div_classical", "add3"][..], 1, 7),
        ] {
            let ops = set(bits, names);
            let brute = all_vectors(&ops, vars, n);
            let limits = SearchLimits { max_functions: usize::MAX };
            let width = ops.width();
            let len = FunctionVector::len_for(width, vars).unwrap();
            let out = search_constants(&ops, vars, Some(n), &limits).unwrap();
            assert_eq!(out.distinct_functions, brute.len(), "{names:?} w={bits}");
            let constants = brute
                .iter()
                .filter(|v| v.iter().all(|&x| x == v[0]))
                .count();
            assert_eq!(out.findings.len(), constants);
            assert!(brute.iter().all(|v| v.len() == len));
        }
    }

    #[test]
    fn compositions_are_lexicographic() {
        assert_eq!(compositions(3, 2), vec![vec![1, 2], vec![2, 1]]);
        assert_eq!(compositions(2, 3), Vec::<Vec<usize>>::new());
        assert_eq!(compositions(4, 1), vec![vec![4]]);
    }

    #[test]
    fn parity_collapse_expansion_preserves_semantics() {
        for bits in 1..=4 {
            let ops = set(bits, &["mul", "add3", "parity_collapse"]);
            let f = parse_formula("(add3 (parity_collapse x) y (parity_collapse (add3 x y y)))", &ops)
                .unwrap();
            let expanded = expand_parity_collapse(&f, w(bits));
            assert!(!expanded.to_string().contains("parity_collapse"));
            let a = f.compile(&ops).unwrap().function_vector().unwrap();
            let b = expanded.compile(&ops).unwrap().function_vector().unwrap();
            assert_eq!(a, b);
        }
    }

    fn arb_node(depth: u32) -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![Just("x"), Just("y"), Just("z"), Just("v_1")].prop_map(Node::var);
        leaf.prop_recursive(depth, 48, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::apply("mul", vec![a, b])),
                (inner.clone(), inner.clone(), inner.clone())
                    .prop_map(|(a, b, c)| Node::apply("add3", vec![a, b, c])),
                inner.prop_map(|a| Node::apply("parity_collapse", vec![a])),
            ]
        })
    }

    proptest! {
        #[test]
        fn parse_print_identity(root in arb_node(5)) {
            let f = Formula::from_root(root);
            let ops = set(4, &["mul", "add3", "parity_collapse"]);
            let text = print_formula(&f);
            let back = parse_formula(&text, &ops).unwrap();
            prop_assert_eq!(back, f);
        }

        #[test]
        fn serde_round_trip(root in arb_node(4)) {
            let f = Formula::from_root(root);
            let json = serde_json::to_string(&f).unwrap();
            let back: Formula = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
