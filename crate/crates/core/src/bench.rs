//! Interpreter benchmark: evaluation time of aggregated policies as the
//! number of policies and the size of each policy grow.
//!
//! Every measured policy accepts the benchmark presentation, so each
//! member of an aggregate is evaluated to completion. Registry documents
//! are served from the cache, so the numbers cover interpretation only.

use std::fmt;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::Value;

use crate::builtins::standard_registry;
use crate::credentials::Challenge;
use crate::node::evaluate;
use crate::sandbox::{Sandbox, EXAMPLE_POLICY};
use crate::tpl::{aggregate_policies, BuiltinRegistry, Policy, Program, DEFAULT_BUDGET};

/// The example policy grown to `clauses` clauses (at least 3) by adding
/// `acceptComputation` rules for other organization types. The extra rules
/// come first, so every one of them is tried and rejected before the
/// matching rule is reached.
pub fn policy_with_clauses(clauses: usize) -> String {
    assert!(clauses >= 3, "the example policy already has 3 clauses");
    let (head, rules) = EXAMPLE_POLICY
        .split_once("\nacceptComputation")
        .expect("example policy has acceptComputation rules");
    let mut src = String::from(head);
    src.push('\n');
    for i in 0..clauses - 3 {
        src.push_str(&format!(
            "acceptComputation(OrgType, ComputationType) :-\n  OrgType == organization_{i},\n  ComputationType == simple_statistics.\n\n"
        ));
    }
    src.push_str("acceptComputation");
    src.push_str(rules);
    src
}

#[derive(Clone, Copy, Debug)]
pub struct BenchConfig {
    /// Timed repetitions; the median is reported.
    pub trials: usize,
    /// Evaluations per trial.
    pub iterations: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            trials: 7,
            iterations: 20,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Measurement {
    pub policies: usize,
    pub clauses_per_policy: usize,
    /// Median seconds per evaluation.
    pub seconds: f64,
    /// Slowest and fastest trial, seconds per evaluation.
    pub min: f64,
    pub max: f64,
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:>4} policies x {:>3} clauses  {:>10.3} ms/op  ({:.3} .. {:.3})",
            self.policies,
            self.clauses_per_policy,
            self.seconds * 1e3,
            self.min * 1e3,
            self.max * 1e3
        )
    }
}

/// A qualified public university credential asking for a machine learning
/// computation over 150 records: accepted by every benchmark policy.
pub struct Bench {
    registry: BuiltinRegistry,
    presentation: Value,
    _sandbox: Sandbox,
}

impl Default for Bench {
    fn default() -> Self {
        Self::new()
    }
}

impl Bench {
    pub fn new() -> Bench {
        let sandbox = Sandbox::new(1);
        let (wallet, cred) = sandbox.buyer("did:ex:bench", "public_university");
        let presentation = wallet.present(cred, vec![], Challenge([0; 32])).to_value();
        Bench {
            registry: standard_registry(sandbox.services.clone()),
            presentation,
            _sandbox: sandbox,
        }
    }

    /// Loads the aggregate of `policies` copies of the `clauses`-clause
    /// policy, each under its own product id.
    pub fn program(&self, policies: usize, clauses: usize) -> (Program, String) {
        let src = policy_with_clauses(clauses);
        let members: Vec<Policy> = (0..policies)
            .map(|i| Policy::parse(&src, &format!("product-{i:03}")).expect("benchmark policy parses"))
            .collect();
        let aggregate = aggregate_policies(&members).expect("benchmark policies aggregate");
        let program = Program::load(&[aggregate.clone()], &self.registry).expect("benchmark program loads");
        (program, aggregate.entry_point().name.clone())
    }

    fn evaluate_once(&self, program: &Program, entry: &str) {
        let verdict = evaluate(
            program,
            entry,
            self.presentation.clone(),
            150,
            "machine_learning",
            DEFAULT_BUDGET,
        );
        assert!(verdict.granted(), "benchmark policy must accept: {:?}", verdict.outcome);
    }

    /// Median time of one evaluation on a loaded program, as a node with a
    /// warm program cache spends it.
    pub fn measure(&self, policies: usize, clauses: usize, config: BenchConfig) -> Measurement {
        let (program, entry) = self.program(policies, clauses);
        // Warm the registry cache and the allocator.
        for _ in 0..config.iterations.min(3) {
            self.evaluate_once(&program, &entry);
        }
        let per_op: Vec<f64> = (0..config.trials.max(1))
            .map(|_| {
                let start = Instant::now();
                for _ in 0..config.iterations.max(1) {
                    self.evaluate_once(&program, &entry);
                }
                start.elapsed().as_secs_f64() / config.iterations.max(1) as f64
            })
            .collect();
        summarize((policies, clauses), per_op)
    }

    /// Two cells measured in alternating trials, so that drift in machine
    /// load hits both alike. Iterations per trial are divided by the
    /// policy count of each cell.
    pub fn measure_pair(&self, a: (usize, usize), b: (usize, usize), config: BenchConfig) -> (Measurement, Measurement) {
        let cells = [a, b].map(|(p, c)| {
            let (program, entry) = self.program(p, c);
            (program, entry, (config.iterations / p).max(1))
        });
        for (program, entry, iterations) in &cells {
            for _ in 0..(*iterations).min(3) {
                self.evaluate_once(program, entry);
            }
        }
        let mut samples = [Vec::new(), Vec::new()];
        for _ in 0..config.trials.max(1) {
            for (i, (program, entry, iterations)) in cells.iter().enumerate() {
                let start = Instant::now();
                for _ in 0..*iterations {
                    self.evaluate_once(program, entry);
                }
                samples[i].push(start.elapsed().as_secs_f64() / *iterations as f64);
            }
        }
        let [sa, sb] = samples;
        (summarize(a, sa), summarize(b, sb))
    }

    /// Median time to parse, aggregate and load, then evaluate once.
    pub fn measure_cold(&self, policies: usize, clauses: usize, config: BenchConfig) -> Measurement {
        let per_op: Vec<f64> = (0..config.trials.max(1))
            .map(|_| {
                let start = Instant::now();
                for _ in 0..config.iterations.max(1) {
                    let (program, entry) = self.program(policies, clauses);
                    self.evaluate_once(&program, &entry);
                }
                start.elapsed().as_secs_f64() / config.iterations.max(1) as f64
            })
            .collect();
        summarize((policies, clauses), per_op)
    }
}

fn summarize((policies, clauses): (usize, usize), mut per_op: Vec<f64>) -> Measurement {
    per_op.sort_by(f64::total_cmp);
    Measurement {
        policies,
        clauses_per_policy: clauses,
        seconds: per_op[per_op.len() / 2],
        min: per_op[0],
        max: per_op[per_op.len() - 1],
    }
}

/// The grid of policy counts and sizes reported by `tpl bench`.
pub const GRID: [(usize, usize); 6] = [(1, 3), (1, 20), (1, 100), (100, 3), (100, 20), (100, 100)];

/// Runs every grid cell; `warm` selects [`Bench::measure`] over
/// [`Bench::measure_cold`].
pub fn run_grid(config: BenchConfig, warm: bool) -> Vec<Measurement> {
    let bench = Bench::new();
    GRID.iter()
        .map(|&(p, c)| {
            // Keep total work per cell roughly constant.
            let scaled = BenchConfig {
                iterations: (config.iterations / p).max(1),
                ..config
            };
            if warm {
                bench.measure(p, c, scaled)
            } else {
                bench.measure_cold(p, c, scaled)
            }
        })
        .collect()
}

/// Ratio of two medians.
pub fn ratio(slow: &Measurement, fast: &Measurement) -> f64 {
    slow.seconds / fast.seconds.max(Duration::from_nanos(1).as_secs_f64())
}
