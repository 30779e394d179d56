//! Event-driven simulation of the cell population.
//!
//! Every living individual owns one pending tentative event: the next
//! proposal of a Poisson clock of rate `B_max`. Proposals are kept in a
//! binary heap keyed by time; a popped proposal is accepted as a fission
//! with probability `B(x)/B_max` where `x` is the mass at that instant.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_mass, ModelSpec};
use crate::observable::TestFn;

pub const DEFAULT_CAP: usize = 1_000_000;

/// Ulam-Harris label: the root is the empty sequence, daughter `i` of `u`
/// is `u` with `i` appended.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label(pub Vec<u32>);

impl Label {
    pub fn root() -> Self {
        Label(Vec::new())
    }

    pub fn generation(&self) -> usize {
        self.0.len()
    }

    pub fn is_ancestor_of(&self, other: &Label) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "0");
        }
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub parent: Option<u32>,
    /// 1 for the larger daughter `(1 - r) x`, 2 for `r x`.
    pub child_index: u8,
    pub generation: u32,
    pub birth_time: f64,
    pub birth_mass: f64,
    /// Fission time, `None` while alive at the horizon (or frozen).
    pub fission_time: Option<f64>,
    pub mass_at_fission: f64,
    pub ratio: f64,
}

/// All individuals ever born in one run, in birth order.
#[derive(Clone, Debug, Default)]
pub struct Genealogy {
    pub x0: f64,
    pub horizon: f64,
    pub individuals: Vec<Individual>,
}

impl Genealogy {
    pub fn label(&self, idx: usize) -> Label {
        let mut out = Vec::new();
        let mut cur = idx;
        while let Some(p) = self.individuals[cur].parent {
            out.push(self.individuals[cur].child_index as u32);
            cur = p as usize;
        }
        out.reverse();
        Label(out)
    }

    /// Whether individual `idx` is alive at `t`, i.e. `b <= t < d`.
    #[inline]
    pub fn alive_at(&self, idx: usize, t: f64) -> bool {
        let ind = &self.individuals[idx];
        ind.birth_time <= t && ind.fission_time.map_or(t <= self.horizon, |d| t < d)
    }

    #[inline]
    pub fn mass_at(&self, model: &ModelSpec, idx: usize, t: f64) -> f64 {
        let ind = &self.individuals[idx];
        model.flow_unchecked(ind.birth_mass, t - ind.birth_time)
    }

    pub fn snapshot(&self, model: &ModelSpec, t: f64) -> PopulationSnapshot {
        let atoms = (0..self.individuals.len())
            .filter(|&i| self.alive_at(i, t))
            .map(|i| SnapshotAtom {
                label: self.label(i),
                mass: self.mass_at(model, i, t),
            })
            .collect();
        PopulationSnapshot { time: t, atoms }
    }

    /// `<Z_t, f>` without materialising labels.
    pub fn observe_at(&self, model: &ModelSpec, t: f64, f: &TestFn) -> f64 {
        self.observe_many(model, t, std::slice::from_ref(f))[0]
    }

    pub fn observe_many(&self, model: &ModelSpec, t: f64, fs: &[TestFn]) -> Vec<f64> {
        let mut acc = vec![0.0; fs.len()];
        for i in 0..self.individuals.len() {
            if self.alive_at(i, t) {
                let m = self.mass_at(model, i, t);
                for (a, f) in acc.iter_mut().zip(fs) {
                    *a += f.eval(m);
                }
            }
        }
        acc
    }

    pub fn event_log(&self) -> Vec<EventRecord> {
        let mut events = vec![EventRecord {
            kind: EventKind::Init,
            time: 0.0,
            label: Label::root(),
            mass_before: self.x0,
            ratio: f64::NAN,
        }];
        for (i, ind) in self.individuals.iter().enumerate() {
            if let Some(d) = ind.fission_time {
                events.push(EventRecord {
                    kind: EventKind::Fission,
                    time: d,
                    label: self.label(i),
                    mass_before: ind.mass_at_fission,
                    ratio: ind.ratio,
                });
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then_with(|| a.label.cmp(&b.label)));
        events
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Init,
    Fission,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub kind: EventKind,
    pub time: f64,
    pub label: Label,
    pub mass_before: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotAtom {
    pub label: Label,
    pub mass: f64,
}

/// The point measure `Z_t` with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationSnapshot {
    pub time: f64,
    pub atoms: Vec<SnapshotAtom>,
}

impl PopulationSnapshot {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }
}

/// `<m, f> = sum over atoms of f(mass)`.
pub fn observe(snapshot: &PopulationSnapshot, f: &TestFn) -> f64 {
    snapshot.atoms.iter().map(|a| f.eval(a.mass)).sum()
}

/// What was simulated before the cap was hit.
#[derive(Clone)]
pub struct PartialLog {
    pub genealogy: Genealogy,
    pub events: usize,
}

impl std::fmt::Debug for PartialLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PartialLog")
            .field("individuals", &self.genealogy.individuals.len())
            .field("events", &self.events)
            .finish()
    }
}

/// Freezing rule applied independently along each ancestral trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoppingLine {
    /// Time of the `k`-th jump (fission) along the lineage.
    JumpCount { k: u32 },
    /// First time with mass in `[lo, hi]`; an individual born inside is
    /// frozen at birth.
    FirstEntrance { lo: f64, hi: f64 },
    FixedTime { t: f64 },
}

impl StoppingLine {
    pub fn entrance_above(y: f64) -> Self {
        StoppingLine::FirstEntrance {
            lo: y,
            hi: f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FrozenAtom {
    pub index: usize,
    pub time: f64,
    pub mass: f64,
}

/// `Z_T` for a simple stopping line `T`.
#[derive(Clone, Debug)]
pub struct FrozenMeasure {
    pub atoms: Vec<FrozenAtom>,
    /// Individuals alive at the horizon whose line had not yet triggered.
    pub unfrozen: usize,
    pub genealogy: Genealogy,
}

impl FrozenMeasure {
    pub fn observe(&self, f: &TestFn) -> f64 {
        self.atoms.iter().map(|a| f.eval(a.mass)).sum()
    }
}

#[derive(Clone, Debug)]
pub struct PopulationRun {
    pub genealogy: Genealogy,
    pub snapshots: Vec<PopulationSnapshot>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Proposal {
    time: f64,
    idx: u32,
}

impl Eq for Proposal {}

impl Ord for Proposal {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on time, ties broken by index
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Proposal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug)]
struct Cursor {
    time: f64,
    mass: f64,
    /// Freeze deadline from a first-entrance line, `inf` if none.
    freeze_at: f64,
}

enum Freeze<'a> {
    None,
    Line(&'a StoppingLine),
}

struct Engine<'a, R: Rng + ?Sized> {
    model: &'a ModelSpec,
    rng: &'a mut R,
    horizon: f64,
    cap: usize,
    b_max: f64,
    genealogy: Genealogy,
    cursors: Vec<Cursor>,
    heap: BinaryHeap<Proposal>,
    alive: usize,
    events: usize,
    frozen: Vec<FrozenAtom>,
}

impl<'a, R: Rng + ?Sized> Engine<'a, R> {
    fn new(model: &'a ModelSpec, x0: f64, horizon: f64, cap: usize, rng: &'a mut R) -> Self {
        Self {
            model,
            rng,
            horizon,
            cap,
            b_max: model.b_max(),
            genealogy: Genealogy {
                x0,
                horizon,
                individuals: Vec::new(),
            },
            cursors: Vec::new(),
            heap: BinaryHeap::new(),
            alive: 0,
            events: 0,
            frozen: Vec::new(),
        }
    }

    fn next_proposal(&mut self, from: f64) -> f64 {
        if self.b_max <= 0.0 {
            return f64::INFINITY;
        }
        let e: f64 = Exp1.sample(self.rng);
        from + e / self.b_max
    }

    fn spawn(&mut self, ind: Individual, freeze: &Freeze) {
        let idx = self.genealogy.individuals.len();
        let (t, m, gen) = (ind.birth_time, ind.birth_mass, ind.generation);
        self.genealogy.individuals.push(ind);
        let mut cursor = Cursor {
            time: t,
            mass: m,
            freeze_at: f64::INFINITY,
        };
        if let Freeze::Line(line) = freeze {
            match **line {
                StoppingLine::JumpCount { k } if gen >= k => {
                    self.freeze(idx, t, m);
                    self.cursors.push(cursor);
                    return;
                }
                StoppingLine::FirstEntrance { lo, hi } => {
                    if m >= lo && m <= hi {
                        self.freeze(idx, t, m);
                        self.cursors.push(cursor);
                        return;
                    }
                    if m < lo {
                        cursor.freeze_at = t + self.model.flow_time_unchecked(m, lo);
                    }
                }
                _ => {}
            }
        }
        self.cursors.push(cursor);
        self.alive += 1;
        let first = self.next_proposal(t);
        self.schedule(idx, first);
    }

    fn freeze(&mut self, idx: usize, time: f64, mass: f64) {
        self.frozen.push(FrozenAtom { index: idx, time, mass });
    }

    fn schedule(&mut self, idx: usize, time: f64) {
        let deadline = self.cursors[idx].freeze_at;
        let t = time.min(deadline);
        if t <= self.horizon {
            self.heap.push(Proposal {
                time: t,
                idx: idx as u32,
            });
        }
    }

    fn run(&mut self, freeze: &Freeze) -> Result<()> {
        while let Some(Proposal { time, idx }) = self.heap.pop() {
            let idx = idx as usize;
            let cur = self.cursors[idx];
            if cur.freeze_at <= time {
                // the lineage enters the target set before this proposal
                if cur.freeze_at <= self.horizon {
                    let m = self.model.flow_unchecked(cur.mass, cur.freeze_at - cur.time);
                    self.freeze(idx, cur.freeze_at, m);
                    self.alive -= 1;
                }
                continue;
            }
            if time > self.horizon {
                continue;
            }
            let mass = self.model.flow_unchecked(cur.mass, time - cur.time);
            let accept = self.model.b(mass) / self.b_max;
            if self.rng.gen::<f64>() >= accept {
                self.cursors[idx].time = time;
                self.cursors[idx].mass = mass;
                let next = self.next_proposal(time);
                self.schedule(idx, next);
                continue;
            }
            let r = self.model.kernel.sample(mass, self.rng);
            self.events += 1;
            let gen = {
                let ind = &mut self.genealogy.individuals[idx];
                ind.fission_time = Some(time);
                ind.mass_at_fission = mass;
                ind.ratio = r;
                ind.generation + 1
            };
            self.alive -= 1;
            let [big, small] = crate::model::BinaryKernel::partition(r);
            for (k, p) in [(1u8, big), (2u8, small)] {
                self.spawn(
                    Individual {
                        parent: Some(idx as u32),
                        child_index: k,
                        generation: gen,
                        birth_time: time,
                        birth_mass: p * mass,
                        fission_time: None,
                        mass_at_fission: f64::NAN,
                        ratio: f64::NAN,
                    },
                    freeze,
                );
            }
            if self.alive > self.cap {
                return Err(Error::Explosion {
                    cap: self.cap,
                    time,
                    partial: Box::new(PartialLog {
                        genealogy: std::mem::take(&mut self.genealogy),
                        events: self.events,
                    }),
                });
            }
        }
        Ok(())
    }
}

fn check_inputs(x0: f64, horizon: f64, cap: usize) -> Result<()> {
    check_mass(x0)?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    if cap < 1 {
        return Err(Error::domain("cap must be >= 1"));
    }
    Ok(())
}

fn root(x0: f64) -> Individual {
    Individual {
        parent: None,
        child_index: 0,
        generation: 0,
        birth_time: 0.0,
        birth_mass: x0,
        fission_time: None,
        mass_at_fission: f64::NAN,
        ratio: f64::NAN,
    }
}

/// Simulate the whole population on `[0, horizon]`.
pub fn grow<R: Rng + ?Sized>(
    model: &ModelSpec,
    x0: f64,
    horizon: f64,
    cap: usize,
    rng: &mut R,
) -> Result<Genealogy> {
    check_inputs(x0, horizon, cap)?;
    let mut engine = Engine::new(model, x0, horizon, cap, rng);
    engine.spawn(root(x0), &Freeze::None);
    engine.run(&Freeze::None)?;
    Ok(engine.genealogy)
}

/// Simulate to `horizon` and take snapshots at `times` (each `<= horizon`).
pub fn simulate_population<R: Rng + ?Sized>(
    model: &ModelSpec,
    x0: f64,
    horizon: f64,
    cap: usize,
    times: &[f64],
    rng: &mut R,
) -> Result<PopulationRun> {
    if let Some(t) = times.iter().find(|&&t| !(0.0..=horizon).contains(&t)) {
        return Err(Error::domain(format!("snapshot time {t} outside [0, {horizon}]")));
    }
    let genealogy = grow(model, x0, horizon, cap, rng)?;
    let snapshots = times.iter().map(|&t| genealogy.snapshot(model, t)).collect();
    Ok(PopulationRun {
        genealogy,
        snapshots,
    })
}

/// The point measure of individuals frozen at the simple stopping line.
pub fn freeze_at<R: Rng + ?Sized>(
    model: &ModelSpec,
    x0: f64,
    line: &StoppingLine,
    horizon: f64,
    cap: usize,
    rng: &mut R,
) -> Result<FrozenMeasure> {
    check_inputs(x0, horizon, cap)?;
    if let StoppingLine::FixedTime { t } = *line {
        if !(t >= 0.0) {
            return Err(Error::domain("fixed-time line needs t >= 0"));
        }
        let run_to = t.min(horizon);
        let g = grow(model, x0, run_to, cap, rng)?;
        let (atoms, unfrozen) = if t <= horizon {
            let atoms = (0..g.individuals.len())
                .filter(|&i| g.alive_at(i, t))
                .map(|i| FrozenAtom {
                    index: i,
                    time: t,
                    mass: g.mass_at(model, i, t),
                })
                .collect();
            (atoms, 0)
        } else {
            let n = (0..g.individuals.len())
                .filter(|&i| g.alive_at(i, horizon))
                .count();
            (Vec::new(), n)
        };
        return Ok(FrozenMeasure {
            atoms,
            unfrozen,
            genealogy: g,
        });
    }
    if let StoppingLine::FirstEntrance { lo, hi } = *line {
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::domain("first-entrance line needs 0 < lo <= hi"));
        }
    }
    let freeze = Freeze::Line(line);
    let mut engine = Engine::new(model, x0, horizon, cap, rng);
    engine.spawn(root(x0), &freeze);
    engine.run(&freeze)?;
    let unfrozen = engine.alive;
    let mut atoms = engine.frozen;
    atoms.sort_by_key(|a| a.index);
    Ok(FrozenMeasure {
        atoms,
        unfrozen,
        genealogy: engine.genealogy,
    })
}

/// Write the event log as CSV: `kind,time,label,mass_before,ratio`.
pub fn write_event_log<W: Write>(out: &mut W, events: &[EventRecord]) -> std::io::Result<()> {
    writeln!(out, "kind,time,label,mass_before,ratio")?;
    for e in events {
        let kind = match e.kind {
            EventKind::Init => "init",
            EventKind::Fission => "fission",
        };
        writeln!(
            out,
            "{kind},{},{},{},{}",
            crate::io::fmt_f64(e.time),
            e.label,
            crate::io::fmt_f64(e.mass_before),
            crate::io::fmt_f64(e.ratio)
        )?;
    }
    Ok(())
}

/// Write snapshots as CSV: `time,label,mass`.
pub fn write_snapshots<W: Write>(out: &mut W, snaps: &[PopulationSnapshot]) -> std::io::Result<()> {
    writeln!(out, "time,label,mass")?;
    for s in snaps {
        for a in &s.atoms {
            writeln!(
                out,
                "{},{},{}",
                crate::io::fmt_f64(s.time),
                a.label,
                crate::io::fmt_f64(a.mass)
            )?;
        }
    }
    Ok(())
}
