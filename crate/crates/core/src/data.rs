//! Trajectory and transition containers, CSV ingestion, trajectory-wise
//! splitting, and discounted-return computation.
//!
//! On disk a dataset is one CSV with a row per step
//! (`traj_id, t, s_0..s_{p-1}, a_0..a_{q-1}, r_0..r_{d-1}`) plus a JSON
//! manifest recording the dimensions, discount and seed. The next state of
//! step t is row t+1 of the same trajectory; the final step of a trajectory
//! contributes no transition of its own.

use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KedrlError, Result};

/// One trajectory: T steps of states, actions and rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: DMatrix<f64>,  // T x p
    pub actions: DMatrix<f64>, // T x q
    pub rewards: DMatrix<f64>, // T x d
}

impl Trajectory {
    pub fn new(states: DMatrix<f64>, actions: DMatrix<f64>, rewards: DMatrix<f64>) -> Result<Self> {
        let t = states.nrows();
        if t == 0 {
            return Err(KedrlError::invalid("trajectory must have at least one step"));
        }
        if actions.nrows() != t || rewards.nrows() != t {
            return Err(KedrlError::invalid(format!(
                "trajectory row counts differ: states {t}, actions {}, rewards {}",
                actions.nrows(),
                rewards.nrows()
            )));
        }
        let traj = Trajectory { states, actions, rewards };
        if traj.states.iter().chain(traj.actions.iter()).chain(traj.rewards.iter()).any(|v| !v.is_finite()) {
            return Err(KedrlError::invalid("trajectory contains non-finite entries"));
        }
        Ok(traj)
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }
}

/// Flattened transition records (s, a, r, s', a') with trajectory provenance.
#[derive(Debug, Clone)]
pub struct TransitionDataset {
    pub states: DMatrix<f64>,       // n x p
    pub actions: DMatrix<f64>,      // n x q
    pub rewards: DMatrix<f64>,      // n x d
    pub next_states: DMatrix<f64>,  // n x p
    pub next_actions: DMatrix<f64>, // n x q (behavior action taken at s')
    pub trajectory_ids: Vec<usize>,
}

impl TransitionDataset {
    pub fn n(&self) -> usize {
        self.states.nrows()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.states.ncols(), self.actions.ncols(), self.rewards.ncols())
    }

    /// Stacked (s, a) inputs, n x (p+q).
    pub fn inputs(&self) -> DMatrix<f64> {
        stack_columns(&self.states, &self.actions)
    }

    /// Stacked (s', a') next inputs, n x (p+q).
    pub fn next_inputs(&self) -> DMatrix<f64> {
        stack_columns(&self.next_states, &self.next_actions)
    }
}

pub(crate) fn stack_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, a.ncols() + b.ncols());
    out.view_mut((0, 0), (n, a.ncols())).copy_from(a);
    out.view_mut((0, a.ncols()), (n, b.ncols())).copy_from(b);
    out
}

/// A realized discounted return paired with the state-action it started from.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSample {
    pub start_state: Vec<f64>,
    pub start_action: Vec<f64>,
    pub value: Vec<f64>,
}

/// Concatenate per-step transition tuples; each trajectory of length T
/// yields T-1 transitions (its last step is used only as next state).
pub fn flatten(trajectories: &[Trajectory]) -> Result<TransitionDataset> {
    if trajectories.is_empty() {
        return Err(KedrlError::invalid("flatten: empty trajectory list"));
    }
    let (p, q, d) = (
        trajectories[0].states.ncols(),
        trajectories[0].actions.ncols(),
        trajectories[0].rewards.ncols(),
    );
    for (i, tr) in trajectories.iter().enumerate() {
        if tr.states.ncols() != p || tr.actions.ncols() != q || tr.rewards.ncols() != d {
            return Err(KedrlError::invalid(format!("flatten: trajectory {i} has inconsistent dimensions")));
        }
    }
    let n: usize = trajectories.iter().map(|t| t.len().saturating_sub(1)).sum();
    if n == 0 {
        return Err(KedrlError::invalid("flatten: no transitions (all trajectories have a single step)"));
    }
    let mut states = DMatrix::zeros(n, p);
    let mut actions = DMatrix::zeros(n, q);
    let mut rewards = DMatrix::zeros(n, d);
    let mut next_states = DMatrix::zeros(n, p);
    let mut next_actions = DMatrix::zeros(n, q);
    let mut trajectory_ids = Vec::with_capacity(n);
    let mut row = 0;
    for (id, tr) in trajectories.iter().enumerate() {
        for t in 0..tr.len().saturating_sub(1) {
            states.row_mut(row).copy_from(&tr.states.row(t));
            actions.row_mut(row).copy_from(&tr.actions.row(t));
            rewards.row_mut(row).copy_from(&tr.rewards.row(t));
            next_states.row_mut(row).copy_from(&tr.states.row(t + 1));
            next_actions.row_mut(row).copy_from(&tr.actions.row(t + 1));
            trajectory_ids.push(id);
            row += 1;
        }
    }
    Ok(TransitionDataset { states, actions, rewards, next_states, next_actions, trajectory_ids })
}

/// Discounted return from `start_index`, truncated at the trajectory end:
/// sum_{t=start}^{T-1} gamma^(t-start) r_t.
pub fn discounted_return(traj: &Trajectory, start_index: usize, gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(KedrlError::invalid(format!("discount must be in [0, 1), got {gamma}")));
    }
    let t_len = traj.len();
    if start_index >= t_len {
        return Err(KedrlError::invalid(format!(
            "start_index {start_index} out of range for trajectory of length {t_len}"
        )));
    }
    let d = traj.rewards.ncols();
    let mut out = vec![0.0; d];
    let mut disc = 1.0;
    for t in start_index..t_len {
        for c in 0..d {
            out[c] += disc * traj.rewards[(t, c)];
        }
        disc *= gamma;
    }
    Ok(out)
}

/// Return samples at every step of every trajectory (truncated returns).
///
/// With `horizon_correct`, each sample is divided by 1 - gamma^(steps left),
/// an unbiased-in-mean surrogate for the infinite-horizon return; useful for
/// building return grids that cover the fixed-point support.
pub fn return_samples(trajectories: &[Trajectory], gamma: f64, transitions_only: bool, horizon_correct: bool) -> Result<Vec<ReturnSample>> {
    let mut out = Vec::new();
    for traj in trajectories {
        let hi = if transitions_only { traj.len().saturating_sub(1) } else { traj.len() };
        for t in 0..hi {
            let mut value = discounted_return(traj, t, gamma)?;
            if horizon_correct {
                let h = (traj.len() - t) as i32;
                let denom = 1.0 - gamma.powi(h);
                for v in value.iter_mut() {
                    *v /= denom;
                }
            }
            out.push(ReturnSample {
                start_state: traj.states.row(t).iter().copied().collect(),
                start_action: traj.actions.row(t).iter().copied().collect(),
                value,
            });
        }
    }
    Ok(out)
}

/// Deterministic partition of `count` trajectory indices into three groups
/// sized by largest-remainder rounding of the fractions.
pub(crate) fn partition_indices(count: usize, fractions: (f64, f64, f64), seed: u64) -> Result<[Vec<usize>; 3]> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|f| *f < 0.0) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(KedrlError::invalid(format!("split fractions must be nonnegative and sum to 1, got {fr:?}")));
    }
    let nonzero = fr.iter().filter(|f| **f > 0.0).count();
    if count < nonzero {
        return Err(KedrlError::invalid(format!(
            "cannot split {count} trajectories into {nonzero} nonempty groups"
        )));
    }
    let mut sizes = [0usize; 3];
    let mut rem: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0;
    for (i, f) in fr.iter().enumerate() {
        let exact = f * count as f64;
        sizes[i] = exact.floor() as usize;
        assigned += sizes[i];
        rem.push((i, exact - exact.floor()));
    }
    rem.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..(count - assigned) {
        sizes[rem[k % 3].0] += 1;
    }
    // every nonzero fraction gets at least one trajectory
    for i in 0..3 {
        if fr[i] > 0.0 && sizes[i] == 0 {
            let donor = (0..3).max_by_key(|j| sizes[*j]).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let train: Vec<usize> = order[..sizes[0]].to_vec();
    let val: Vec<usize> = order[sizes[0]..sizes[0] + sizes[1]].to_vec();
    let test: Vec<usize> = order[sizes[0] + sizes[1]..sizes[0] + sizes[1] + sizes[2]].to_vec();
    Ok([train, val, test])
}

/// Split whole trajectories into train/validation/test datasets.
pub fn split_by_trajectory(
    dataset: &TransitionDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(TransitionDataset, TransitionDataset, TransitionDataset)> {
    let mut ids: Vec<usize> = dataset.trajectory_ids.clone();
    ids.dedup();
    let groups = partition_indices(ids.len(), fractions, seed)?;
    let pick = |keep: &[usize]| -> TransitionDataset {
        let keep_ids: std::collections::HashSet<usize> = keep.iter().map(|k| ids[*k]).collect();
        let rows: Vec<usize> = dataset
            .trajectory_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| keep_ids.contains(id))
            .map(|(r, _)| r)
            .collect();
        TransitionDataset {
            states: dataset.states.select_rows(rows.iter()),
            actions: dataset.actions.select_rows(rows.iter()),
            rewards: dataset.rewards.select_rows(rows.iter()),
            next_states: dataset.next_states.select_rows(rows.iter()),
            next_actions: dataset.next_actions.select_rows(rows.iter()),
            trajectory_ids: rows.iter().map(|r| dataset.trajectory_ids[*r]).collect(),
        }
    };
    Ok((pick(&groups[0]), pick(&groups[1]), pick(&groups[2])))
}

/// Split a trajectory list with the same deterministic partition rule.
pub fn split_trajectories(
    trajectories: &[Trajectory],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>, Vec<Trajectory>)> {
    let groups = partition_indices(trajectories.len(), fractions, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|i| trajectories[*i].clone()).collect();
    Ok((pick(&groups[0]), pick(&groups[1]), pick(&groups[2])))
}

/// Dataset manifest stored next to the CSV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub state_dim: usize,
    pub action_dim: usize,
    pub reward_dim: usize,
    pub discount: f64,
    pub seed: u64,
    pub n_trajectories: usize,
}

/// Write trajectories as step-per-row CSV plus a JSON manifest.
pub fn write_csv(path: &Path, trajectories: &[Trajectory], manifest: &DatasetManifest) -> Result<()> {
    if trajectories.is_empty() {
        return Err(KedrlError::invalid("write_csv: empty trajectory list"));
    }
    let (p, q, d) = (
        trajectories[0].states.ncols(),
        trajectories[0].actions.ncols(),
        trajectories[0].rewards.ncols(),
    );
    let mut w = csv::Writer::from_path(path).map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
    let mut header = vec!["traj_id".to_string(), "t".to_string()];
    header.extend((0..p).map(|i| format!("s_{i}")));
    header.extend((0..q).map(|i| format!("a_{i}")));
    header.extend((0..d).map(|i| format!("r_{i}")));
    w.write_record(&header).map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
    for (id, tr) in trajectories.iter().enumerate() {
        for t in 0..tr.len() {
            let mut rec = vec![id.to_string(), t.to_string()];
            rec.extend(tr.states.row(t).iter().map(|v| format!("{v:.17e}")));
            rec.extend(tr.actions.row(t).iter().map(|v| format!("{v:.17e}")));
            rec.extend(tr.rewards.row(t).iter().map(|v| format!("{v:.17e}")));
            w.write_record(&rec).map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
        }
    }
    w.flush().map_err(|e| KedrlError::io(path.display().to_string(), e))?;
    let mpath = manifest_path(path);
    let mut f = std::fs::File::create(&mpath).map_err(|e| KedrlError::io(mpath.display().to_string(), e))?;
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    f.write_all(body.as_bytes()).map_err(|e| KedrlError::io(mpath.display().to_string(), e))?;
    Ok(())
}

pub fn manifest_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("manifest.json")
}

/// Read trajectories and manifest written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<Trajectory>, DatasetManifest)> {
    let mpath = manifest_path(path);
    let mtext = std::fs::read_to_string(&mpath).map_err(|e| KedrlError::io(mpath.display().to_string(), e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&mtext).map_err(|e| KedrlError::format(mpath.display().to_string(), e.to_string()))?;
    let (p, q, d) = (manifest.state_dim, manifest.action_dim, manifest.reward_dim);
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| KedrlError::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;
    let width = 2 + p + q + d;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
        if rec.len() != width {
            return Err(KedrlError::format(
                path.display().to_string(),
                format!("row {line}: expected {width} columns, got {}", rec.len()),
            ));
        }
        let parse = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|_| {
                KedrlError::format(path.display().to_string(), format!("row {line}: bad number {:?}", &rec[i]))
            })
        };
        let id = rec[0].trim().parse::<usize>().map_err(|_| {
            KedrlError::format(path.display().to_string(), format!("row {line}: bad traj_id {:?}", &rec[0]))
        })?;
        let t = rec[1].trim().parse::<usize>().map_err(|_| {
            KedrlError::format(path.display().to_string(), format!("row {line}: bad t {:?}", &rec[1]))
        })?;
        let vals: Result<Vec<f64>> = (2..width).map(parse).collect();
        rows.push((id, t, vals?));
    }
    if rows.is_empty() {
        return Err(KedrlError::format(path.display().to_string(), "no data rows".to_string()));
    }
    rows.sort_by_key(|(id, t, _)| (*id, *t));
    let mut trajectories = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].0 != rows[start].0 {
            let steps = &rows[start..i];
            for (off, (_, t, _)) in steps.iter().enumerate() {
                if *t != off {
                    return Err(KedrlError::format(
                        path.display().to_string(),
                        format!("trajectory {} has non-contiguous steps", rows[start].0),
                    ));
                }
            }
            let t_len = steps.len();
            let grab = |lo: usize, w: usize| {
                DMatrix::from_fn(t_len, w, |r, c| steps[r].2[lo + c])
            };
            trajectories.push(Trajectory::new(grab(0, p), grab(p, q), grab(p + q, d))?);
            start = i;
        }
    }
    Ok((trajectories, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(t: usize, seed: u64) -> Trajectory {
        use rand::prelude::*;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Trajectory::new(
            DMatrix::from_fn(t, 2, |_, _| rng.random::<f64>()),
            DMatrix::from_fn(t, 1, |_, _| rng.random::<f64>()),
            DMatrix::from_fn(t, 3, |_, _| rng.random::<f64>()),
        )
        .unwrap()
    }

    #[test]
    fn flatten_counts() {
        let ds = flatten(&[traj(3, 1)]).unwrap();
        assert_eq!(ds.n(), 2);
        let ds = flatten(&[traj(2, 1), traj(2, 2)]).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.trajectory_ids, vec![0, 1]);
        assert!(flatten(&[]).is_err());
    }

    #[test]
    fn flatten_next_rows_line_up() {
        let tr = traj(4, 9);
        let ds = flatten(&[tr.clone()]).unwrap();
        for t in 0..3 {
            for c in 0..2 {
                assert_eq!(ds.next_states[(t, c)], tr.states[(t + 1, c)]);
            }
            assert_eq!(ds.next_actions[(t, 0)], tr.actions[(t + 1, 0)]);
        }
    }

    #[test]
    fn discounted_return_examples() {
        let tr = Trajectory::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]),
        )
        .unwrap();
        assert_eq!(discounted_return(&tr, 0, 0.9).unwrap(), vec![1.0, 2.0, 3.0]);
        let tr = Trajectory::new(
            DMatrix::zeros(3, 1),
            DMatrix::zeros(3, 1),
            DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(discounted_return(&tr, 0, 0.5).unwrap(), vec![1.75]);
        assert_eq!(discounted_return(&tr, 0, 0.0).unwrap(), vec![1.0]);
        assert!(discounted_return(&tr, 3, 0.5).is_err());
    }

    #[test]
    fn zero_rewards_zero_return() {
        let tr = Trajectory::new(DMatrix::zeros(5, 2), DMatrix::zeros(5, 1), DMatrix::zeros(5, 3)).unwrap();
        for g in [0.0, 0.3, 0.99] {
            assert_eq!(discounted_return(&tr, 2, g).unwrap(), vec![0.0; 3]);
        }
    }

    #[test]
    fn horizon_correction_rescales() {
        let tr = Trajectory::new(
            DMatrix::zeros(3, 1),
            DMatrix::zeros(3, 1),
            DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]),
        )
        .unwrap();
        let s = return_samples(&[tr], 0.5, true, true).unwrap();
        // t=0: 1.75 / (1 - 0.125) = 2.0 ; t=1: 1.5 / (1 - 0.25) = 2.0
        assert!((s[0].value[0] - 2.0).abs() < 1e-12);
        assert!((s[1].value[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn split_is_partition() {
        let trajs: Vec<Trajectory> = (0..10).map(|i| traj(3, i)).collect();
        let ds = flatten(&trajs).unwrap();
        let (a, b, c) = split_by_trajectory(&ds, (0.8, 0.1, 0.1), 7).unwrap();
        let ids = |d: &TransitionDataset| {
            let mut v = d.trajectory_ids.clone();
            v.dedup();
            v
        };
        assert_eq!(ids(&a).len(), 8);
        assert_eq!(ids(&b).len(), 1);
        assert_eq!(ids(&c).len(), 1);
        assert_eq!(a.n() + b.n() + c.n(), ds.n());
        let mut all: Vec<usize> = ids(&a).into_iter().chain(ids(&b)).chain(ids(&c)).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        // determinism
        let (a2, ..) = split_by_trajectory(&ds, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a2.trajectory_ids, a.trajectory_ids);
        // all-in-train
        let (a3, b3, c3) = split_by_trajectory(&ds, (1.0, 0.0, 0.0), 3).unwrap();
        assert_eq!(a3.n(), ds.n());
        assert_eq!(b3.n() + c3.n(), 0);
        // too few trajectories
        let small = flatten(&[traj(3, 0), traj(3, 1)]).unwrap();
        assert!(split_by_trajectory(&small, (0.4, 0.3, 0.3), 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("kedrl_data_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.csv");
        let trajs: Vec<Trajectory> = (0..3).map(|i| traj(3, i)).collect();
        let manifest = DatasetManifest {
            state_dim: 2,
            action_dim: 1,
            reward_dim: 3,
            discount: 0.9,
            seed: 42,
            n_trajectories: 3,
        };
        write_csv(&path, &trajs, &manifest).unwrap();
        let (back, m2) = read_csv(&path).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(trajs.iter()) {
            assert_eq!(a, b);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #[test]
        fn partition_is_exhaustive_and_disjoint(count in 3usize..60, seed in 0u64..1000) {
            let groups = partition_indices(count, (0.8, 0.1, 0.1), seed).unwrap();
            let mut all: Vec<usize> = groups.iter().flatten().copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..count).collect::<Vec<_>>());
            prop_assert!(groups.iter().all(|g| !g.is_empty()));
        }
    }
}
