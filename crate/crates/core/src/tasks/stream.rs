use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{randomize_labels_with, Dataset};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng, Stream};
use crate::tensor::Tensor;

fn d_half() -> f64 {
    0.5
}

/// How consecutive tasks differ. Transforms of inputs are pixel (coordinate)
/// permutations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskMode {
    Stationary,
    /// Task 0 carries fully random labels; each later task resamples the
    /// labels of `floor(epsilon * N)` points of the previous task.
    RandomLabels { epsilon: f64 },
    PermuteClasses,
    PermutePixels,
    /// A fresh random subset of `fraction * N` inputs is transformed each task.
    Continual {
        #[serde(default = "d_half")]
        fraction: f64,
    },
    /// The same subset of inputs is transformed (freshly) each task.
    Composite {
        #[serde(default = "d_half")]
        fraction: f64,
    },
    /// Task `k` holds classes `0..=k`, transformed.
    Growing,
}

impl TaskMode {
    pub fn validate(&self) -> Result<()> {
        let frac = match *self {
            TaskMode::RandomLabels { epsilon } => Some(("epsilon", epsilon)),
            TaskMode::Continual { fraction } | TaskMode::Composite { fraction } => Some(("fraction", fraction)),
            _ => None,
        };
        if let Some((name, v)) = frac {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn needs_labels(&self) -> bool {
        matches!(self, TaskMode::RandomLabels { .. } | TaskMode::PermuteClasses | TaskMode::Growing)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    pub base: Dataset,
    pub mode: TaskMode,
    pub steps_per_task: u64,
    pub num_tasks: usize,
    pub seed: u64,
}

fn permute_rows(inputs: &Tensor, rows: impl Iterator<Item = usize>, perm: &[usize]) -> Tensor {
    let mut out = inputs.clone();
    for r in rows {
        let src = inputs.row(r);
        let dst = out.row_mut(r);
        for (d, &p) in dst.iter_mut().zip(perm) {
            *d = src[p];
        }
    }
    out
}

fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

impl TaskStream {
    pub fn new(base: Dataset, mode: TaskMode, steps_per_task: u64, num_tasks: usize, seed: u64) -> Result<Self> {
        mode.validate()?;
        if steps_per_task == 0 {
            return Err(Error::invalid("steps_per_task must be >= 1"));
        }
        if mode.needs_labels() && base.labels().is_none() {
            return Err(Error::invalid(format!("{mode:?} needs a classification dataset")));
        }
        if mode == TaskMode::Growing && num_tasks > base.num_classes().unwrap_or(0) {
            return Err(Error::invalid(format!(
                "growing mode supports at most {} tasks",
                base.num_classes().unwrap_or(0)
            )));
        }
        Ok(Self {
            base,
            mode,
            steps_per_task,
            num_tasks,
            seed,
        })
    }

    fn rng(&self, index: u64) -> Rng {
        substream(self.seed, Stream::Task, index)
    }

    /// Dataset for `task_index`. Pure; random-label tasks are rebuilt from
    /// task 0, so prefer [`TaskStream::iter`] when walking many tasks.
    pub fn next_task(&self, task_index: usize) -> Result<Dataset> {
        if task_index >= self.num_tasks {
            return Err(Error::invalid(format!(
                "task {task_index} out of range for {} tasks",
                self.num_tasks
            )));
        }
        if let TaskMode::RandomLabels { .. } = self.mode {
            return self.iter().nth(task_index).unwrap();
        }
        self.build(task_index, None)
    }

    pub fn iter(&self) -> TaskIter<'_> {
        TaskIter {
            stream: self,
            next: 0,
            prev: None,
        }
    }

    fn build(&self, k: usize, prev: Option<&Dataset>) -> Result<Dataset> {
        let base = &self.base;
        let n = base.len();
        let d = base.input_dim();
        let mut rng = self.rng(k as u64);
        Ok(match self.mode {
            TaskMode::Stationary => base.clone(),
            TaskMode::RandomLabels { epsilon } => match prev {
                None => randomize_labels_with(base, 1.0, &mut rng)?,
                Some(p) => randomize_labels_with(p, epsilon, &mut rng)?,
            },
            _ if k == 0 && self.mode != TaskMode::Growing => base.clone(),
            TaskMode::PermuteClasses => {
                let perm = permutation(base.num_classes().unwrap(), &mut rng);
                let mut out = base.clone();
                let (labels, _) = out.labels_mut().unwrap();
                labels.iter_mut().for_each(|l| *l = perm[*l]);
                out
            }
            TaskMode::PermutePixels => {
                let perm = permutation(d, &mut rng);
                Dataset {
                    inputs: permute_rows(&base.inputs, 0..n, &perm),
                    targets: base.targets.clone(),
                }
            }
            TaskMode::Continual { fraction } => {
                let perm = permutation(d, &mut rng);
                let rows = sample(&mut rng, n, (fraction * n as f64).floor() as usize);
                Dataset {
                    inputs: permute_rows(&base.inputs, rows.into_iter(), &perm),
                    targets: base.targets.clone(),
                }
            }
            TaskMode::Composite { fraction } => {
                let rows = sample(&mut self.rng(u64::MAX), n, (fraction * n as f64).floor() as usize);
                let perm = permutation(d, &mut rng);
                Dataset {
                    inputs: permute_rows(&base.inputs, rows.into_iter(), &perm),
                    targets: base.targets.clone(),
                }
            }
            TaskMode::Growing => {
                let labels = base.labels().unwrap();
                let keep: Vec<usize> = (0..n).filter(|&i| labels[i] <= k).collect();
                if keep.is_empty() {
                    return Err(Error::invalid(format!("no samples with label <= {k}")));
                }
                let mut out = base.subset(&keep);
                if k > 0 {
                    let perm = permutation(d, &mut rng);
                    out.inputs = permute_rows(&out.inputs, 0..keep.len(), &perm);
                }
                out
            }
        })
    }
}

/// Walks the tasks in order, reusing the previous task where the mode is
/// cumulative.
pub struct TaskIter<'a> {
    stream: &'a TaskStream,
    next: usize,
    prev: Option<Dataset>,
}

impl Iterator for TaskIter<'_> {
    type Item = Result<Dataset>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.stream.num_tasks {
            return None;
        }
        let k = self.next;
        self.next += 1;
        let out = self.stream.build(k, self.prev.as_ref());
        if let (TaskMode::RandomLabels { .. }, Ok(ds)) = (self.stream.mode, &out) {
            self.prev = Some(ds.clone());
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::synth_dataset;

    fn base() -> Dataset {
        synth_dataset(4, 6, 20, 2).unwrap()
    }

    #[test]
    fn pixel_permutation_keeps_multiset() {
        let s = TaskStream::new(base(), TaskMode::PermutePixels, 10, 3, 5).unwrap();
        let t = s.next_task(2).unwrap();
        for r in 0..t.len() {
            let mut a = t.inputs.row(r).to_vec();
            let mut b = s.base.inputs.row(r).to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
        assert_eq!(t.labels(), s.base.labels());
    }

    #[test]
    fn growing_starts_with_one_class() {
        let s = TaskStream::new(base(), TaskMode::Growing, 10, 4, 5).unwrap();
        let t0 = s.next_task(0).unwrap();
        assert!(t0.labels().unwrap().iter().all(|&l| l == 0));
        let t2 = s.next_task(2).unwrap();
        assert_eq!(t2.len(), 60);
    }

    #[test]
    fn random_labels_iter_matches_pure_construction() {
        let s = TaskStream::new(base(), TaskMode::RandomLabels { epsilon: 0.3 }, 10, 5, 8).unwrap();
        let walked: Vec<Dataset> = s.iter().map(Result::unwrap).collect();
        for (k, ds) in walked.iter().enumerate() {
            assert_eq!(*ds, s.next_task(k).unwrap());
            assert_eq!(ds.inputs, s.base.inputs);
        }
    }

    #[test]
    fn composite_touches_the_same_rows() {
        let s = TaskStream::new(base(), TaskMode::Composite { fraction: 0.25 }, 10, 4, 1).unwrap();
        let changed = |k| {
            let t = s.next_task(k).unwrap();
            (0..t.len())
                .filter(|&r| t.inputs.row(r) != s.base.inputs.row(r))
                .collect::<Vec<_>>()
        };
        assert_eq!(changed(1), changed(3));
        assert_eq!(changed(1).len(), 20);
    }

    #[test]
    fn out_of_range_task_is_an_error() {
        let s = TaskStream::new(base(), TaskMode::Stationary, 10, 2, 1).unwrap();
        assert!(s.next_task(2).is_err());
        assert!(TaskStream::new(base(), TaskMode::Stationary, 0, 2, 1).is_err());
    }
}
