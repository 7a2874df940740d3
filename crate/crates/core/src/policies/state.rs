use serde::{Deserialize, Serialize};

/// Discretized observation an update agent acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PolicyState {
    /// Hosting node CPU load, rounded to the nearest level.
    pub load_bin: u8,
    /// Waiting requests of the model, bucketed by `queue_edges`.
    pub queue_bin: u8,
    pub model: u16,
    /// `min(latest - current, gap_cap)`.
    pub gap_bin: u8,
}

impl PolicyState {
    /// Whether an update is possible from this state.
    pub fn has_newer(&self) -> bool {
        self.gap_bin > 0
    }
}

/// Binning configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBins {
    /// Load levels between 0 and 1: 4 gives {0, .25, .5, .75, 1}.
    pub load_levels: u8,
    /// Inclusive upper edges of the queue buckets; one more bucket holds
    /// everything above the last edge.
    pub queue_edges: Vec<usize>,
    pub gap_cap: u8,
}

impl Default for StateBins {
    fn default() -> Self {
        Self {
            load_levels: 4,
            queue_edges: vec![0, 2, 5, 10],
            gap_cap: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoder {
    bins: StateBins,
    models: usize,
}

impl StateEncoder {
    pub fn new(bins: StateBins, models: usize) -> Self {
        assert!(bins.load_levels > 0, "at least one load level");
        Self { bins, models }
    }

    pub fn bins(&self) -> &StateBins {
        &self.bins
    }

    pub fn models(&self) -> usize {
        self.models
    }

    fn load_count(&self) -> usize {
        self.bins.load_levels as usize + 1
    }

    fn queue_count(&self) -> usize {
        self.bins.queue_edges.len() + 1
    }

    fn gap_count(&self) -> usize {
        self.bins.gap_cap as usize + 1
    }

    pub fn encode(&self, load: f64, queued: usize, model: usize, gap: u32) -> PolicyState {
        let levels = self.bins.load_levels as f64;
        let load_bin = (load.clamp(0.0, 1.0) * levels).round() as u8;
        let queue_bin = self
            .bins
            .queue_edges
            .iter()
            .position(|&edge| queued <= edge)
            .unwrap_or(self.bins.queue_edges.len()) as u8;
        PolicyState {
            load_bin,
            queue_bin,
            model: model as u16,
            gap_bin: gap.min(self.bins.gap_cap as u32) as u8,
        }
    }

    pub fn state_count(&self) -> usize {
        self.load_count() * self.queue_count() * self.models * self.gap_count()
    }

    pub fn index(&self, s: &PolicyState) -> usize {
        let mut i = s.load_bin as usize;
        i = i * self.queue_count() + s.queue_bin as usize;
        i = i * self.models + s.model as usize;
        i * self.gap_count() + s.gap_bin as usize
    }

    pub fn state_at(&self, mut i: usize) -> PolicyState {
        let gap_bin = (i % self.gap_count()) as u8;
        i /= self.gap_count();
        let model = (i % self.models) as u16;
        i /= self.models;
        let queue_bin = (i % self.queue_count()) as u8;
        i /= self.queue_count();
        PolicyState {
            load_bin: i as u8,
            queue_bin,
            model,
            gap_bin,
        }
    }

    pub fn is_valid(&self, s: &PolicyState) -> bool {
        (s.load_bin as usize) < self.load_count()
            && (s.queue_bin as usize) < self.queue_count()
            && (s.model as usize) < self.models
            && (s.gap_bin as usize) < self.gap_count()
    }
}
