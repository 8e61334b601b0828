//! Safety analysis for n-bit arithmetic operators.
//!
//! An operator set is *safe* when no formula built from it computes a
//! constant function. `mul` and `add3` form a safe base; another operator may
//! join them iff it fixes the zero tuple and keeps all-odd tuples odd.

pub mod cli;
pub mod closure;
pub mod error;
pub mod expr;
pub mod optable;
pub mod safety;

pub use closure::{close, count_tables, ClosureLimits, ClosureResult, Conditions, FunctionVector, SeedSet};
pub use error::{Error, Result};
pub use expr::{is_constant, parse_formula, print_formula, search_constants, Formula, Node, SampleOptions};
pub use optable::{Builtin, OpSet, Operator, Width};
pub use safety::{analyze, analyze_with, patch, patchwork, witness, SafetyReport, Verdict, Witness};
