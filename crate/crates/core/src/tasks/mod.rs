//! Datasets, task schedules, regression targets and the contextual bandit.

mod bandit;
mod dataset;
mod stream;
mod targets;

pub use bandit::{bandit_reward, bandit_transition, BanditMDP};
pub use dataset::{gaussian_inputs, load_cifar10_bin, load_mnist_idx, randomize_labels, synth_dataset, Dataset, Targets};
pub use stream::{TaskIter, TaskMode, TaskStream};
pub use targets::{gen_regression_targets, RegressionTargetGen, TargetKind, SINE_FREQUENCY};
