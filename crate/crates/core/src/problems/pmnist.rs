//! Online Permuted MNIST: a sequence of tasks, each a fixed random pixel
//! permutation applied to every image, presented one example at a time.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::mnist::MnistDataset;
use crate::rng::{derive_seed, RunRng};

pub const MNIST_PIXELS: usize = 784;

const PERMUTATION_TAG: u64 = 0x7065_726d;
const ORDER_TAG: u64 = 0x6f72_6465;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmnistConfig {
    pub n_tasks: usize,
    pub examples_per_task: usize,
    /// Sample each task's examples with replacement instead of one shuffled pass.
    pub with_replacement: bool,
}

impl Default for PmnistConfig {
    fn default() -> Self {
        Self {
            n_tasks: 800,
            examples_per_task: 60_000,
            with_replacement: false,
        }
    }
}

impl PmnistConfig {
    pub fn validate(&self, dataset_len: Option<usize>) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::Config("pmnist.n_tasks must be >= 1".into()));
        }
        if self.examples_per_task == 0 {
            return Err(Error::Config(
                "pmnist.examples_per_task must be >= 1".into(),
            ));
        }
        if let Some(len) = dataset_len {
            if !self.with_replacement && self.examples_per_task > len {
                return Err(Error::Config(format!(
                    "pmnist.examples_per_task ({}) exceeds the dataset size ({len})",
                    self.examples_per_task
                )));
            }
        }
        Ok(())
    }
}

/// Fisher–Yates permutation of `0..len`, deterministic in `seed`.
pub fn permutation_of_len(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = RunRng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..len).collect();
    p.shuffle(&mut rng);
    p
}

pub fn generate_permutation(seed: u64) -> Vec<usize> {
    permutation_of_len(MNIST_PIXELS, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutedTask {
    /// Output pixel `j` is source pixel `permutation[j]`.
    pub permutation: Vec<usize>,
    /// Dataset indices in presentation order.
    pub order: Vec<usize>,
}

/// Pixel permutation of task `index` in the stream seeded by `seed`.
pub fn task_permutation(index: usize, seed: u64, image_size: usize) -> Vec<usize> {
    permutation_of_len(image_size, derive_seed(seed, PERMUTATION_TAG, index as u64))
}

impl PermutedTask {
    /// Task `index` of the stream seeded by `seed`.
    pub fn new(
        index: usize,
        seed: u64,
        image_size: usize,
        dataset_len: usize,
        cfg: &PmnistConfig,
    ) -> Self {
        let permutation = task_permutation(index, seed, image_size);
        let mut rng = RunRng::seed_from_u64(derive_seed(seed, ORDER_TAG, index as u64));
        let order = if cfg.with_replacement {
            (0..cfg.examples_per_task)
                .map(|_| rng.random_range(0..dataset_len))
                .collect()
        } else {
            let mut all: Vec<usize> = (0..dataset_len).collect();
            all.shuffle(&mut rng);
            all.truncate(cfg.examples_per_task);
            all
        };
        Self { permutation, order }
    }
}

/// A single-consumer stream over all tasks. The learner sees only images and
/// labels; the task index is returned for bookkeeping by the caller.
#[derive(Debug, Clone)]
pub struct PmnistStream<'a> {
    dataset: &'a MnistDataset,
    cfg: PmnistConfig,
    seed: u64,
    task_index: usize,
    position: usize,
    task: PermutedTask,
}

pub fn pmnist_task_stream<'a>(
    dataset: &'a MnistDataset,
    cfg: &PmnistConfig,
    seed: u64,
) -> Result<PmnistStream<'a>> {
    cfg.validate(Some(dataset.len()))?;
    let task = PermutedTask::new(0, seed, dataset.image_size(), dataset.len(), cfg);
    Ok(PmnistStream {
        dataset,
        cfg: *cfg,
        seed,
        task_index: 0,
        position: 0,
        task,
    })
}

/// Where an emitted example sits in the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleInfo {
    pub task: usize,
    /// Position within the task.
    pub position: usize,
    pub label: usize,
}

impl<'a> PmnistStream<'a> {
    pub fn config(&self) -> &PmnistConfig {
        &self.cfg
    }

    pub fn current_task(&self) -> &PermutedTask {
        &self.task
    }

    pub fn total_examples(&self) -> usize {
        self.cfg.n_tasks * self.cfg.examples_per_task
    }

    /// Writes the next permuted image into `image`; `None` once every task is done.
    pub fn next_into(&mut self, image: &mut [f64]) -> Result<Option<ExampleInfo>> {
        if self.position == self.cfg.examples_per_task {
            if self.task_index + 1 >= self.cfg.n_tasks {
                return Ok(None);
            }
            self.task_index += 1;
            self.position = 0;
            self.task = PermutedTask::new(
                self.task_index,
                self.seed,
                self.dataset.image_size(),
                self.dataset.len(),
                &self.cfg,
            );
        }
        let i = self.task.order[self.position];
        self.dataset
            .fill_permuted(i, &self.task.permutation, image)?;
        let info = ExampleInfo {
            task: self.task_index,
            position: self.position,
            label: self.dataset.label(i),
        };
        self.position += 1;
        Ok(Some(info))
    }
}
