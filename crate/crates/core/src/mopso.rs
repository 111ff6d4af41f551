//! Multi-objective particle swarm optimization with a bounded non-dominated archive.
//!
//! The engine is generic over a [`Problem`] that maps a continuous position to a
//! decoded solution and its objective vector. Fitness evaluations inside one
//! iteration run in parallel; archive and personal-best updates are applied afterwards
//! in particle-index order so runs are reproducible from the seed.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::util::{sigmoid, stream_rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub direction: Direction,
    pub weight: f64,
}

/// Objective directions and scalarization weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    objectives: Vec<Objective>,
}

impl ObjectiveSpec {
    pub fn new(objectives: Vec<Objective>) -> Result<Self> {
        if objectives.is_empty() {
            return Err(Error::InvalidArgument("need at least one objective".into()));
        }
        if objectives.iter().any(|o| !(o.weight >= 0.0) || !o.weight.is_finite()) {
            return Err(Error::InvalidArgument(
                "objective weights must be finite and >= 0".into(),
            ));
        }
        if objectives.iter().map(|o| o.weight).sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument("objective weights sum to zero".into()));
        }
        Ok(ObjectiveSpec { objectives })
    }

    /// Equal weights over the given directions.
    pub fn equal(directions: &[Direction]) -> Self {
        ObjectiveSpec::new(
            directions
                .iter()
                .map(|&direction| Objective { direction, weight: 1.0 })
                .collect(),
        )
        .expect("equal weights over a non-empty list")
    }

    pub fn len(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectives.is_empty()
    }

    pub fn objectives(&self) -> &[Objective] {
        &self.objectives
    }

    /// Weights scaled to sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.objectives.iter().map(|o| o.weight).sum();
        self.objectives.iter().map(|o| o.weight / total).collect()
    }

    /// Flips minimized objectives so that larger is always better.
    fn oriented(&self, value: f64, objective: usize) -> f64 {
        match self.objectives[objective].direction {
            Direction::Maximize => value,
            Direction::Minimize => -value,
        }
    }

    /// Weighted sum of direction-adjusted objectives (no per-objective rescaling).
    pub fn scalar(&self, fitness: &[f64]) -> f64 {
        self.normalized_weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.oriented(fitness[i], i))
            .sum()
    }
}

/// Pareto dominance: `a` is no worse on every objective and strictly better on one.
pub fn dominates(a: &[f64], b: &[f64], spec: &ObjectiveSpec) -> Result<bool> {
    if a.len() != b.len() || a.len() != spec.len() {
        return Err(Error::InvalidArgument(format!(
            "fitness lengths {} and {} for {} objectives",
            a.len(),
            b.len(),
            spec.len()
        )));
    }
    Ok(dominates_unchecked(a, b, spec))
}

fn dominates_unchecked(a: &[f64], b: &[f64], spec: &ObjectiveSpec) -> bool {
    let mut strictly = false;
    for i in 0..a.len() {
        let (x, y) = (spec.oriented(a[i], i), spec.oriented(b[i], i));
        if x < y {
            return false;
        }
        if x > y {
            strictly = true;
        }
    }
    strictly
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub n_particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Per-dimension `(lo, hi)` position bounds.
    pub bounds: Vec<(f64, f64)>,
    /// Velocity is clamped to `±v_max_fraction * (hi - lo)` per dimension.
    pub v_max_fraction: f64,
    pub archive_capacity: usize,
    pub seed: u64,
}

impl SwarmConfig {
    /// Default swarm settings over the given bounds.
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        SwarmConfig {
            n_particles: 30,
            iterations: 50,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
            bounds,
            v_max_fraction: 0.2,
            archive_capacity: 50,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_particles < 2 {
            return bad("swarm needs at least two particles");
        }
        if self.iterations < 1 {
            return bad("swarm needs at least one iteration");
        }
        if !(self.v_max_fraction > 0.0 && self.v_max_fraction <= 1.0) {
            return bad("v_max_fraction must be in (0, 1]");
        }
        if self.archive_capacity < 1 {
            return bad("archive capacity must be at least 1");
        }
        if self.bounds.is_empty() {
            return bad("search space has no dimensions");
        }
        if self
            .bounds
            .iter()
            .any(|&(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite())
        {
            return bad("every bound must satisfy lo < hi");
        }
        Ok(())
    }

    fn v_max(&self, d: usize) -> f64 {
        let (lo, hi) = self.bounds[d];
        self.v_max_fraction * (hi - lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub personal_best_position: Vec<f64>,
    pub personal_best_fitness: Vec<f64>,
}

impl Particle {
    /// One velocity/position update toward `personal_best_position` and `leader`, with
    /// fresh per-dimension uniforms from `rng`. Velocity and position are clamped.
    pub fn advance(&mut self, leader: &[f64], config: &SwarmConfig, rng: &mut impl Rng) {
        for d in 0..self.position.len() {
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            let x = self.position[d];
            let v_max = config.v_max(d);
            let v = config.inertia * self.velocity[d]
                + config.cognitive * r1 * (self.personal_best_position[d] - x)
                + config.social * r2 * (leader[d] - x);
            self.velocity[d] = v.clamp(-v_max, v_max);
            let (lo, hi) = config.bounds[d];
            self.position[d] = (x + self.velocity[d]).clamp(lo, hi);
        }
    }

    /// Replaces the personal best when `fitness` dominates it, or when neither dominates
    /// and `fitness` has the higher weighted scalar score.
    pub fn consider(&mut self, fitness: &[f64], spec: &ObjectiveSpec) -> bool {
        let better = dominates_unchecked(fitness, &self.personal_best_fitness, spec)
            || (!dominates_unchecked(&self.personal_best_fitness, fitness, spec)
                && spec.scalar(fitness) > spec.scalar(&self.personal_best_fitness));
        if better {
            self.personal_best_position.clone_from(&self.position);
            self.personal_best_fitness = fitness.to_vec();
        }
        better
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry<S> {
    pub position: Vec<f64>,
    pub solution: S,
    pub fitness: Vec<f64>,
}

/// Mutually non-dominated solutions, at most `capacity` of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive<S> {
    pub entries: Vec<ArchiveEntry<S>>,
    pub capacity: usize,
}

impl<S: Clone + PartialEq> Archive<S> {
    pub fn new(capacity: usize) -> Self {
        Archive {
            entries: Vec::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts `candidate` unless an entry dominates it or already holds the same
    /// solution. Entries the candidate dominates are dropped; when over capacity the
    /// most crowded entry is evicted. Returns whether the candidate was kept.
    pub fn offer(&mut self, candidate: ArchiveEntry<S>, spec: &ObjectiveSpec) -> bool {
        if self
            .entries
            .iter()
            .any(|e| e.solution == candidate.solution || dominates_unchecked(&e.fitness, &candidate.fitness, spec))
        {
            return false;
        }
        self.entries
            .retain(|e| !dominates_unchecked(&candidate.fitness, &e.fitness, spec));
        self.entries.push(candidate);
        let mut kept = true;
        while self.entries.len() > self.capacity {
            let cd = self.crowding_distances();
            let mut worst = 0;
            for (i, &d) in cd.iter().enumerate() {
                if d < cd[worst] {
                    worst = i;
                }
            }
            if worst == self.entries.len() - 1 {
                kept = false;
            }
            self.entries.remove(worst);
        }
        kept
    }

    /// Crowding distance of every entry; boundary entries on any objective are infinite.
    pub fn crowding_distances(&self) -> Vec<f64> {
        let n = self.entries.len();
        let mut distance = vec![0.0; n];
        if n <= 2 {
            return vec![f64::INFINITY; n];
        }
        let m = self.entries[0].fitness.len();
        let mut order: Vec<usize> = (0..n).collect();
        for obj in 0..m {
            order.sort_by(|&a, &b| {
                self.entries[a].fitness[obj]
                    .total_cmp(&self.entries[b].fitness[obj])
                    .then(a.cmp(&b))
            });
            let lo = self.entries[order[0]].fitness[obj];
            let hi = self.entries[order[n - 1]].fitness[obj];
            distance[order[0]] = f64::INFINITY;
            distance[order[n - 1]] = f64::INFINITY;
            let spread = hi - lo;
            if spread <= 0.0 {
                continue;
            }
            for w in 1..n - 1 {
                let gap = self.entries[order[w + 1]].fitness[obj] - self.entries[order[w - 1]].fitness[obj];
                distance[order[w]] += gap / spread;
            }
        }
        distance
    }

    /// Binary tournament favoring the less crowded entry.
    pub fn pick_leader(&self, crowding: &[f64], rng: &mut impl Rng) -> &ArchiveEntry<S> {
        let a = rng.random_range(0..self.entries.len());
        let b = rng.random_range(0..self.entries.len());
        let pick = if crowding[b] > crowding[a] || (crowding[b] == crowding[a] && b < a) {
            b
        } else {
            a
        };
        &self.entries[pick]
    }

    /// No entry dominates another.
    pub fn is_mutually_non_dominated(&self, spec: &ObjectiveSpec) -> bool {
        self.entries.iter().enumerate().all(|(i, a)| {
            self.entries
                .iter()
                .enumerate()
                .all(|(j, b)| i == j || !dominates_unchecked(&a.fitness, &b.fitness, spec))
        })
    }
}

/// Functional form of [`Archive::offer`].
pub fn update_archive<S: Clone + PartialEq>(
    mut archive: Archive<S>,
    candidate: ArchiveEntry<S>,
    spec: &ObjectiveSpec,
) -> Archive<S> {
    archive.offer(candidate, spec);
    archive
}

/// Picks the archive entry with the highest equal-weight sum of per-objective min-max
/// normalized (direction-adjusted) scores. Ties go to the lexicographically larger
/// direction-adjusted fitness, then to the earlier entry.
pub fn select_final<'a, S>(archive: &'a Archive<S>, spec: &ObjectiveSpec) -> Result<&'a ArchiveEntry<S>> {
    if archive.entries.is_empty() {
        return Err(Error::InvalidArgument("cannot select from an empty archive".into()));
    }
    let m = spec.len();
    let weights = spec.normalized_weights();
    let oriented: Vec<Vec<f64>> = archive
        .entries
        .iter()
        .map(|e| (0..m).map(|i| spec.oriented(e.fitness[i], i)).collect())
        .collect();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for f in &oriented {
        for i in 0..m {
            lo[i] = lo[i].min(f[i]);
            hi[i] = hi[i].max(f[i]);
        }
    }
    let score = |f: &[f64]| -> f64 {
        (0..m)
            .map(|i| {
                let range = hi[i] - lo[i];
                if range > 0.0 {
                    weights[i] * (f[i] - lo[i]) / range
                } else {
                    0.0
                }
            })
            .sum()
    };
    const TIE: f64 = 1e-12;
    let mut best = 0;
    let mut best_score = score(&oriented[0]);
    for (i, f) in oriented.iter().enumerate().skip(1) {
        let s = score(f);
        let wins = if (s - best_score).abs() <= TIE {
            lexicographic_greater(f, &oriented[best])
        } else {
            s > best_score
        };
        if wins {
            best = i;
            best_score = s;
        }
    }
    Ok(&archive.entries[best])
}

fn lexicographic_greater(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return true;
        }
        if x < y {
            return false;
        }
    }
    false
}

/// Samples a bit mask with `P(bit_d = 1) = sigmoid(position_d)`.
pub fn binarize(position: &[f64], rng: &mut impl Rng) -> Vec<bool> {
    position.iter().map(|&x| rng.random::<f64>() < sigmoid(x)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<S> {
    pub solution: S,
    pub fitness: Vec<f64>,
}

/// An optimization problem over a continuous box.
pub trait Problem: Sync {
    type Solution: Clone + PartialEq + Send + Sync;

    /// Decodes and scores a position. `rng` is the particle's private stream.
    fn evaluate(
        &self,
        position: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> std::result::Result<Evaluation<Self::Solution>, String>;

    /// Hook run once on the initial swarm before any archive update, e.g. to fit a
    /// data-driven objective scale. May rewrite the fitness vectors.
    fn calibrate(&self, _initial: &mut [Evaluation<Self::Solution>]) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord<S> {
    pub iteration: usize,
    pub particle: usize,
    pub solution: S,
    pub fitness: Vec<f64>,
}

/// A running swarm: particles, their private random streams and the shared archive.
pub struct Swarm<'p, P: Problem> {
    problem: &'p P,
    config: SwarmConfig,
    spec: ObjectiveSpec,
    pub particles: Vec<Particle>,
    rngs: Vec<ChaCha8Rng>,
    pub archive: Archive<P::Solution>,
    pub iteration: usize,
    pub trace: Vec<TraceRecord<P::Solution>>,
    /// Archive fitness vectors after each iteration (index 0 = after initialization).
    pub history: Vec<Vec<Vec<f64>>>,
}

impl<'p, P: Problem> Swarm<'p, P> {
    /// Random positions in the bounds, zero velocities, one evaluation per particle.
    pub fn initialize(problem: &'p P, config: SwarmConfig, spec: ObjectiveSpec) -> Result<Self> {
        config.validate()?;
        let dim = config.bounds.len();
        let mut rngs: Vec<ChaCha8Rng> = (0..config.n_particles)
            .map(|i| stream_rng(config.seed, i as u64 + 1))
            .collect();
        let positions: Vec<Vec<f64>> = rngs
            .iter_mut()
            .map(|rng| {
                config
                    .bounds
                    .iter()
                    .map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo))
                    .collect()
            })
            .collect();
        let mut evaluations = evaluate_all(problem, &positions, &mut rngs)?;
        problem.calibrate(&mut evaluations);
        for e in &evaluations {
            if e.fitness.len() != spec.len() {
                return Err(Error::InvalidArgument(format!(
                    "problem returned {} objectives, spec has {}",
                    e.fitness.len(),
                    spec.len()
                )));
            }
        }

        let mut swarm = Swarm {
            problem,
            particles: Vec::with_capacity(config.n_particles),
            rngs,
            archive: Archive::new(config.archive_capacity),
            iteration: 0,
            trace: Vec::new(),
            history: Vec::new(),
            config,
            spec,
        };
        for (i, (position, e)) in positions.into_iter().zip(evaluations).enumerate() {
            swarm.particles.push(Particle {
                velocity: vec![0.0; dim],
                personal_best_position: position.clone(),
                personal_best_fitness: e.fitness.clone(),
                position,
            });
            swarm.absorb(i, e);
        }
        swarm.snapshot();
        Ok(swarm)
    }

    fn absorb(&mut self, i: usize, e: Evaluation<P::Solution>) {
        self.trace.push(TraceRecord {
            iteration: self.iteration,
            particle: i,
            solution: e.solution.clone(),
            fitness: e.fitness.clone(),
        });
        self.archive.offer(
            ArchiveEntry {
                position: self.particles[i].position.clone(),
                solution: e.solution,
                fitness: e.fitness,
            },
            &self.spec,
        );
    }

    fn snapshot(&mut self) {
        self.history
            .push(self.archive.entries.iter().map(|e| e.fitness.clone()).collect());
    }

    /// Moves every particle, evaluates the new positions and folds the results into
    /// personal bests and the archive.
    pub fn step(&mut self) -> Result<()> {
        self.iteration += 1;
        let crowding = self.archive.crowding_distances();
        for (particle, rng) in self.particles.iter_mut().zip(self.rngs.iter_mut()) {
            let leader = self.archive.pick_leader(&crowding, rng).position.clone();
            particle.advance(&leader, &self.config, rng);
        }
        let positions: Vec<Vec<f64>> = self.particles.iter().map(|p| p.position.clone()).collect();
        let evaluations = evaluate_all(self.problem, &positions, &mut self.rngs)?;
        for (i, e) in evaluations.into_iter().enumerate() {
            self.particles[i].consider(&e.fitness, &self.spec);
            self.absorb(i, e);
        }
        self.snapshot();
        Ok(())
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn config(&self) -> &SwarmConfig {
        &self.config
    }

    pub fn finish(self) -> RunOutcome<P::Solution> {
        RunOutcome {
            archive: self.archive,
            trace: self.trace,
            history: self.history,
        }
    }
}

fn evaluate_all<P: Problem>(
    problem: &P,
    positions: &[Vec<f64>],
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<Evaluation<P::Solution>>> {
    positions
        .par_iter()
        .zip(rngs.par_iter_mut())
        .enumerate()
        .map(|(i, (pos, rng))| {
            problem
                .evaluate(pos, rng)
                .map_err(|message| Error::Fitness { particle: i, message })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome<S> {
    pub archive: Archive<S>,
    pub trace: Vec<TraceRecord<S>>,
    pub history: Vec<Vec<Vec<f64>>>,
}

impl<S> RunOutcome<S> {
    /// Writes `iteration,entry,f0,f1,...` rows of the archive after every iteration.
    pub fn write_history_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let m = self.history.iter().flatten().next().map_or(0, Vec::len);
        let header: Vec<String> = ["iteration".to_string(), "entry".to_string()]
            .into_iter()
            .chain((0..m).map(|i| format!("f{i}")))
            .collect();
        writeln!(file, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        for (it, archive) in self.history.iter().enumerate() {
            for (k, f) in archive.iter().enumerate() {
                let values: Vec<String> = f.iter().map(f64::to_string).collect();
                writeln!(file, "{it},{k},{}", values.join(",")).map_err(|e| Error::io(path, e))?;
            }
        }
        file.flush().map_err(|e| Error::io(path, e))
    }
}

/// Initializes a swarm and runs `config.iterations` steps.
pub fn run<P: Problem>(problem: &P, config: SwarmConfig, spec: ObjectiveSpec) -> Result<RunOutcome<P::Solution>> {
    let iterations = config.iterations;
    let mut swarm = Swarm::initialize(problem, config, spec)?;
    for _ in 0..iterations {
        swarm.step()?;
    }
    Ok(swarm.finish())
}
