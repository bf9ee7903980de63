//! Ground-truth simulators, reward/constraint builders, data generation,
//! and rule-based baseline policies for the three benchmark domains:
//! reservoir networks, multi-room HVAC, and a slippery navigation maze.
//!
//! Instance constants ship with the crate (see `builtin`) and round-trip
//! through a TOML config format.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DomainError;
use crate::gradplan::TapedDynamics;
use crate::nn::dataset::{Dataset, DatasetMeta};
use crate::nn::tape::{NodeId, Tape};
use crate::nn::tensor::Tensor;
use crate::planning::{
    Constraint, LinExpr, PlanningProblem, PwlExpr, PwlTerm, Relation, VarDecl, VarKind, VarRef,
};

/// Water evaporation from one reservoir at level `l`.
pub fn evaporation(l: f64) -> f64 {
    0.5 * (0.5 * l).sin() * 0.1
}

/// Slippage multiplier at Euclidean distance `d` from the maze center:
/// 2 / (1 + exp(-2 d)) - 0.99, i.e. 0.01 at the center and ~1.01 far away.
pub fn slippage(d: f64) -> f64 {
    2.0 / (1.0 + (-2.0 * d).exp()) - 0.99
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReservoirInstance {
    pub name: String,
    /// upstream[r] lists the reservoirs whose outflow feeds r.
    pub upstream: Vec<Vec<usize>>,
    /// Maximum outflow per reservoir (action upper bound).
    pub r_max: Vec<f64>,
    /// Safe band [m, n] per reservoir.
    pub m: Vec<f64>,
    pub n: Vec<f64>,
    /// Declared level bounds.
    pub l_max: f64,
    pub init: Vec<f64>,
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HvacInstance {
    pub name: String,
    /// Heat capacity per room.
    pub c: Vec<f64>,
    /// Symmetric thermal links (room, room, resistance R).
    pub links: Vec<(usize, usize, f64)>,
    pub b_max: Vec<f64>,
    /// Heating cost coefficient.
    pub k: f64,
    pub dt: f64,
    /// Comfort band [m, n] shared by all rooms.
    pub m: f64,
    pub n: f64,
    /// Declared temperature bounds.
    pub p_min: f64,
    pub p_max: f64,
    pub init: Vec<f64>,
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NavigationInstance {
    pub name: String,
    pub p_min: [f64; 2],
    pub p_max: [f64; 2],
    pub dp_min: f64,
    pub dp_max: f64,
    pub center: [f64; 2],
    pub goal: [f64; 2],
    pub start: [f64; 2],
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "lowercase")]
pub enum DomainInstance {
    Reservoir(ReservoirInstance),
    Hvac(HvacInstance),
    Navigation(NavigationInstance),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplorationPolicy {
    UniformRandom,
    EpsilonBaseline,
}

impl ReservoirInstance {
    pub fn size(&self) -> usize {
        self.init.len()
    }

    pub fn step(&self, levels: &[f64], flows: &[f64]) -> Result<Vec<f64>, DomainError> {
        check_dims(levels, self.size())?;
        check_dims(flows, self.size())?;
        let bad: Vec<usize> = (0..self.size())
            .filter(|&r| flows[r] < -1e-9 || flows[r] > levels[r] + 1e-9)
            .collect();
        if !bad.is_empty() {
            return Err(DomainError::ConstraintViolation { kind: "reservoir outflow".into(), indices: bad });
        }
        Ok((0..self.size())
            .map(|r| {
                let inflow: f64 = self.upstream[r].iter().map(|&u| flows[u]).sum();
                levels[r] + inflow - flows[r] - evaporation(levels[r])
            })
            .collect())
    }

    pub fn baseline(&self, levels: &[f64]) -> Vec<f64> {
        // release everything above the safe-band median
        (0..self.size())
            .map(|r| {
                let median = 0.5 * (self.m[r] + self.n[r]);
                (levels[r] - median).max(0.0).min(self.r_max[r]).min(levels[r].max(0.0))
            })
            .collect()
    }

    pub fn planning_problem(&self) -> PlanningProblem {
        let mut vars = Vec::new();
        for r in 0..self.size() {
            vars.push(VarDecl {
                name: format!("l{r}"),
                kind: VarKind::State,
                lower: 0.0,
                upper: self.l_max,
                default: self.init[r],
            });
        }
        for r in 0..self.size() {
            vars.push(VarDecl {
                name: format!("f{r}"),
                kind: VarKind::Action,
                lower: 0.0,
                upper: self.r_max[r],
                default: 0.0,
            });
        }
        let global_constraints = (0..self.size())
            .map(|r| Constraint {
                name: format!("outflow_le_level_{r}"),
                expr: LinExpr {
                    terms: vec![
                        (1.0, VarRef { kind: VarKind::Action, index: r }),
                        (-1.0, VarRef { kind: VarKind::State, index: r }),
                    ],
                    constant: 0.0,
                },
                relation: Relation::Le,
                rhs: 0.0,
            })
            .collect();
        let mut terms = Vec::new();
        for r in 0..self.size() {
            let mid = 0.5 * (self.m[r] + self.n[r]);
            terms.push(PwlTerm::Abs {
                coeff: -0.1,
                expr: LinExpr::state(r, -1.0).with_constant(mid),
            });
            terms.push(PwlTerm::MaxZero {
                coeff: -100.0,
                expr: LinExpr::state(r, -1.0).with_constant(self.m[r]),
            });
            terms.push(PwlTerm::MaxZero {
                coeff: -5.0,
                expr: LinExpr::state(r, 1.0).with_constant(-self.n[r]),
            });
        }
        PlanningProblem {
            vars,
            global_constraints,
            init: self.init.clone(),
            goal: vec![],
            reward: PwlExpr { terms, constant: 0.0 },
            horizon: self.horizon,
        }
    }
}

impl HvacInstance {
    pub fn size(&self) -> usize {
        self.init.len()
    }

    pub fn step(&self, temps: &[f64], heats: &[f64]) -> Result<Vec<f64>, DomainError> {
        check_dims(temps, self.size())?;
        check_dims(heats, self.size())?;
        let bad: Vec<usize> = (0..self.size())
            .filter(|&r| heats[r] < -1e-9 || heats[r] > self.b_max[r] + 1e-9)
            .collect();
        if !bad.is_empty() {
            return Err(DomainError::ConstraintViolation { kind: "hvac heating".into(), indices: bad });
        }
        let mut next = temps.to_vec();
        let mut flow = vec![0.0; self.size()];
        for &(a, b, resistance) in &self.links {
            let q = (temps[b] - temps[a]) / resistance;
            flow[a] += q;
            flow[b] -= q;
        }
        for r in 0..self.size() {
            next[r] = temps[r] + self.dt / self.c[r] * (heats[r] + flow[r]);
        }
        Ok(next)
    }

    pub fn baseline(&self, temps: &[f64]) -> Vec<f64> {
        let median = 0.5 * (self.m + self.n);
        (0..self.size())
            .map(|r| if temps[r] < median { self.b_max[r] } else { 0.0 })
            .collect()
    }

    pub fn planning_problem(&self) -> PlanningProblem {
        let mut vars = Vec::new();
        for r in 0..self.size() {
            vars.push(VarDecl {
                name: format!("p{r}"),
                kind: VarKind::State,
                lower: self.p_min,
                upper: self.p_max,
                default: self.init[r],
            });
        }
        for r in 0..self.size() {
            vars.push(VarDecl {
                name: format!("b{r}"),
                kind: VarKind::Action,
                lower: 0.0,
                upper: self.b_max[r],
                default: 0.0,
            });
        }
        let median = 0.5 * (self.m + self.n);
        let mut terms = Vec::new();
        for r in 0..self.size() {
            terms.push(PwlTerm::Abs {
                coeff: -10.0,
                expr: LinExpr::state(r, -1.0).with_constant(median),
            });
            terms.push(PwlTerm::Linear(LinExpr::action(r, -self.k)));
            terms.push(PwlTerm::MaxZero {
                coeff: -0.1,
                expr: LinExpr::state(r, 1.0).with_constant(-self.n),
            });
            terms.push(PwlTerm::MaxZero {
                coeff: -0.1,
                expr: LinExpr::state(r, -1.0).with_constant(self.m),
            });
        }
        PlanningProblem {
            vars,
            global_constraints: vec![],
            init: self.init.clone(),
            goal: vec![],
            reward: PwlExpr { terms, constant: 0.0 },
            horizon: self.horizon,
        }
    }
}

impl NavigationInstance {
    pub fn step(&self, pos: &[f64], mv: &[f64]) -> Result<Vec<f64>, DomainError> {
        check_dims(pos, 2)?;
        check_dims(mv, 2)?;
        let bad: Vec<usize> = (0..2)
            .filter(|&d| mv[d] < self.dp_min - 1e-9 || mv[d] > self.dp_max + 1e-9)
            .collect();
        if !bad.is_empty() {
            return Err(DomainError::ConstraintViolation { kind: "navigation move".into(), indices: bad });
        }
        let d = ((pos[0] - self.center[0]).powi(2) + (pos[1] - self.center[1]).powi(2)).sqrt();
        let lambda = slippage(d);
        Ok((0..2)
            .map(|i| (pos[i] + mv[i] * lambda).clamp(self.p_min[i], self.p_max[i]))
            .collect())
    }

    pub fn baseline(&self, pos: &[f64]) -> Vec<f64> {
        // head straight for the goal, one clipped Manhattan component each
        (0..2).map(|d| (self.goal[d] - pos[d]).clamp(self.dp_min, self.dp_max)).collect()
    }

    pub fn planning_problem(&self) -> PlanningProblem {
        let mut vars = Vec::new();
        for (d, axis) in ["x", "y"].iter().enumerate() {
            vars.push(VarDecl {
                name: format!("p{axis}"),
                kind: VarKind::State,
                lower: self.p_min[d],
                upper: self.p_max[d],
                default: self.start[d],
            });
        }
        for axis in ["x", "y"] {
            vars.push(VarDecl {
                name: format!("d{axis}"),
                kind: VarKind::Action,
                lower: self.dp_min,
                upper: self.dp_max,
                default: 0.0,
            });
        }
        let terms = (0..2)
            .map(|d| PwlTerm::Abs {
                coeff: -1.0,
                expr: LinExpr::state(d, -1.0).with_constant(self.goal[d]),
            })
            .collect();
        PlanningProblem {
            vars,
            global_constraints: vec![],
            init: self.start.to_vec(),
            goal: vec![],
            reward: PwlExpr { terms, constant: 0.0 },
            horizon: self.horizon,
        }
    }
}

/// True navigation dynamics on the tape (for gradient planning against the
/// exact simulator). Requires a square maze so the clamp is per-scalar.
impl TapedDynamics for NavigationInstance {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn step_on_tape(&self, tape: &mut Tape, state: NodeId, action: NodeId) -> NodeId {
        assert!(
            self.p_min[0] == self.p_min[1] && self.p_max[0] == self.p_max[1],
            "taped navigation requires a square maze"
        );
        let batch = tape.value(state).rows;
        let center = tape.constant(Tensor::broadcast_rows(&self.center, batch));
        let diff = tape.sub(state, center);
        let sq = tape.square(diff);
        let d2 = tape.sum_cols(sq);
        let d = tape.sqrt(d2);
        let e = tape.scale(d, -2.0);
        let ex = tape.exp(e);
        let denom = tape.add_scalar(ex, 1.0);
        let inv = tape.recip(denom);
        let two = tape.scale(inv, 2.0);
        let lambda = tape.add_scalar(two, -0.99);
        let lambda2 = tape.concat_cols(&[lambda, lambda]);
        let mv = tape.mul_elem(action, lambda2);
        let next = tape.add(state, mv);
        tape.clamp(next, self.p_min[0], self.p_max[0])
    }

    fn step(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        self.step(state, action).expect("bounded action")
    }
}

impl DomainInstance {
    pub fn name(&self) -> &str {
        match self {
            DomainInstance::Reservoir(i) => &i.name,
            DomainInstance::Hvac(i) => &i.name,
            DomainInstance::Navigation(i) => &i.name,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            DomainInstance::Reservoir(i) => i.horizon,
            DomainInstance::Hvac(i) => i.horizon,
            DomainInstance::Navigation(i) => i.horizon,
        }
    }

    pub fn planning_problem(&self) -> PlanningProblem {
        match self {
            DomainInstance::Reservoir(i) => i.planning_problem(),
            DomainInstance::Hvac(i) => i.planning_problem(),
            DomainInstance::Navigation(i) => i.planning_problem(),
        }
    }

    pub fn step(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>, DomainError> {
        match self {
            DomainInstance::Reservoir(i) => i.step(state, action),
            DomainInstance::Hvac(i) => i.step(state, action),
            DomainInstance::Navigation(i) => i.step(state, action),
        }
    }

    pub fn baseline(&self, state: &[f64]) -> Vec<f64> {
        match self {
            DomainInstance::Reservoir(i) => i.baseline(state),
            DomainInstance::Hvac(i) => i.baseline(state),
            DomainInstance::Navigation(i) => i.baseline(state),
        }
    }

    /// Uniform-random exploration action, projected into the feasible set
    /// (reservoir outflow additionally capped by the current level).
    pub fn explore_action(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            DomainInstance::Reservoir(i) => (0..i.size())
                .map(|r| {
                    let hi = state[r].max(0.0).min(i.r_max[r]);
                    if hi <= 0.0 {
                        0.0
                    } else {
                        rng.gen_range(0.0..hi)
                    }
                })
                .collect(),
            DomainInstance::Hvac(i) => {
                i.b_max.iter().map(|&hi| rng.gen_range(0.0..hi)).collect()
            }
            DomainInstance::Navigation(i) => {
                (0..2).map(|_| rng.gen_range(i.dp_min..i.dp_max)).collect()
            }
        }
    }

    /// Uniform random state inside the declared box (used for episode
    /// resets during data generation so the samples cover the state space).
    fn random_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let problem = self.planning_problem();
        problem
            .state_vars()
            .map(|v| rng.gen_range(v.lower..v.upper))
            .collect()
    }

    /// N transition samples from episodic rollouts of length `horizon`;
    /// each episode restarts from a fresh random state in the declared box.
    pub fn generate_data(
        &self,
        policy: ExplorationPolicy,
        n: usize,
        seed: u64,
    ) -> Result<Dataset, DomainError> {
        let problem = self.planning_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let meta = DatasetMeta {
            domain: self.name().to_string(),
            policy: match policy {
                ExplorationPolicy::UniformRandom => "uniform-random".into(),
                ExplorationPolicy::EpsilonBaseline => "epsilon-baseline".into(),
            },
            seed,
        };
        let mut ds = Dataset::new(problem.state_dim(), problem.action_dim(), meta);
        let mut state = self.random_state(&mut rng);
        let mut steps_in_episode = 0usize;
        while ds.len() < n {
            if steps_in_episode == self.horizon() {
                state = self.random_state(&mut rng);
                steps_in_episode = 0;
            }
            let action = match policy {
                ExplorationPolicy::UniformRandom => self.explore_action(&state, &mut rng),
                ExplorationPolicy::EpsilonBaseline => {
                    if rng.gen::<f64>() < 0.3 {
                        self.explore_action(&state, &mut rng)
                    } else {
                        // the baseline may need projection to stay feasible
                        let mut a = self.baseline(&state);
                        if let DomainInstance::Reservoir(i) = self {
                            for r in 0..a.len() {
                                a[r] = a[r].min(state[r].max(0.0)).min(i.r_max[r]).max(0.0);
                            }
                        }
                        a
                    }
                }
            };
            let next = self.step(&state, &action)?;
            ds.push(&state, &action, &next);
            // clamp into the declared box so the next sample stays valid
            let problem_box: Vec<(f64, f64)> =
                problem.state_vars().map(|v| (v.lower, v.upper)).collect();
            state = next
                .iter()
                .zip(problem_box.iter())
                .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
                .collect();
            steps_in_episode += 1;
        }
        Ok(ds)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("instance serializes")
    }

    pub fn from_toml(text: &str) -> Result<DomainInstance, DomainError> {
        toml::from_str(text).map_err(|e| DomainError::Config(e.to_string()))
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &[
            "reservoir3",
            "reservoir4",
            "reservoir10",
            "hvac3",
            "hvac6",
            "hvac60",
            "nav8",
            "nav10",
            "nav10-fine",
        ]
    }

    pub fn builtin(name: &str) -> Option<DomainInstance> {
        Some(match name {
            "reservoir3" => DomainInstance::Reservoir(ReservoirInstance {
                name: "reservoir3".into(),
                upstream: vec![vec![], vec![0], vec![1]],
                r_max: vec![10.0; 3],
                m: vec![2.0; 3],
                n: vec![8.0; 3],
                l_max: 10.0,
                init: vec![7.5, 5.0, 3.0],
                horizon: 10,
            }),
            "reservoir4" => DomainInstance::Reservoir(ReservoirInstance {
                name: "reservoir4".into(),
                // diamond: two sources both feed reservoir 2, which feeds 3
                upstream: vec![vec![], vec![], vec![0, 1], vec![2]],
                r_max: vec![10.0; 4],
                m: vec![2.0; 4],
                n: vec![8.0; 4],
                l_max: 10.0,
                init: vec![7.5, 6.0, 4.5, 3.0],
                horizon: 10,
            }),
            "reservoir10" => {
                // two chains of four merging into a shared pair
                let upstream = vec![
                    vec![],
                    vec![0],
                    vec![1],
                    vec![2],
                    vec![],
                    vec![4],
                    vec![5],
                    vec![6],
                    vec![3, 7],
                    vec![8],
                ];
                DomainInstance::Reservoir(ReservoirInstance {
                    name: "reservoir10".into(),
                    upstream,
                    r_max: vec![10.0; 10],
                    m: vec![2.0; 10],
                    n: vec![8.0; 10],
                    l_max: 10.0,
                    init: vec![7.5, 7.0, 6.5, 6.0, 5.5, 5.0, 4.5, 4.0, 3.5, 3.0],
                    horizon: 10,
                })
            }
            "hvac3" => DomainInstance::Hvac(HvacInstance {
                name: "hvac3".into(),
                c: vec![10.0; 3],
                links: vec![(0, 1, 1.5), (1, 2, 1.5)],
                b_max: vec![10.0; 3],
                k: 1.0,
                dt: 1.0,
                m: 20.0,
                n: 25.0,
                p_min: 0.0,
                p_max: 40.0,
                init: vec![15.0, 15.0, 15.0],
                horizon: 10,
            }),
            "hvac6" => DomainInstance::Hvac(HvacInstance {
                name: "hvac6".into(),
                c: vec![10.0; 6],
                // 2 x 3 grid of rooms
                links: vec![
                    (0, 1, 1.5),
                    (1, 2, 1.5),
                    (3, 4, 1.5),
                    (4, 5, 1.5),
                    (0, 3, 1.5),
                    (1, 4, 1.5),
                    (2, 5, 1.5),
                ],
                b_max: vec![10.0; 6],
                k: 1.0,
                dt: 1.0,
                m: 20.0,
                n: 25.0,
                p_min: 0.0,
                p_max: 40.0,
                init: vec![15.0; 6],
                horizon: 10,
            }),
            "hvac60" => {
                // 6 x 10 grid of rooms
                let mut links = Vec::new();
                for row in 0..6usize {
                    for col in 0..10usize {
                        let r = row * 10 + col;
                        if col + 1 < 10 {
                            links.push((r, r + 1, 1.5));
                        }
                        if row + 1 < 6 {
                            links.push((r, r + 10, 1.5));
                        }
                    }
                }
                DomainInstance::Hvac(HvacInstance {
                    name: "hvac60".into(),
                    c: vec![10.0; 60],
                    links,
                    b_max: vec![10.0; 60],
                    k: 1.0,
                    dt: 1.0,
                    m: 20.0,
                    n: 25.0,
                    p_min: 0.0,
                    p_max: 40.0,
                    init: vec![15.0; 60],
                    horizon: 10,
                })
            }
            "nav8" => DomainInstance::Navigation(NavigationInstance {
                name: "nav8".into(),
                p_min: [0.0, 0.0],
                p_max: [8.0, 8.0],
                dp_min: -1.0,
                dp_max: 1.0,
                center: [4.0, 4.0],
                goal: [7.0, 7.0],
                start: [0.0, 0.0],
                horizon: 10,
            }),
            "nav10" => DomainInstance::Navigation(NavigationInstance {
                name: "nav10".into(),
                p_min: [0.0, 0.0],
                p_max: [10.0, 10.0],
                dp_min: -1.0,
                dp_max: 1.0,
                center: [5.0, 5.0],
                goal: [8.0, 8.0],
                start: [0.0, 0.0],
                horizon: 10,
            }),
            "nav10-fine" => DomainInstance::Navigation(NavigationInstance {
                name: "nav10-fine".into(),
                p_min: [0.0, 0.0],
                p_max: [10.0, 10.0],
                dp_min: -0.5,
                dp_max: 0.5,
                center: [5.0, 5.0],
                goal: [8.0, 8.0],
                start: [0.0, 0.0],
                horizon: 20,
            }),
            _ => return None,
        })
    }
}

fn check_dims(v: &[f64], expected: usize) -> Result<(), DomainError> {
    if v.len() != expected {
        return Err(DomainError::DimensionMismatch { expected, got: v.len() });
    }
    Ok(())
}
