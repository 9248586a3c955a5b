//! End-to-end factorization: walk, complete, merge, order, then CP rank
//! selection or Tucker compression.

use log::info;
use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::cp::{greedy_order, select_rank, CpDecomposition, MdlReport, OrderedBlocks};
use crate::error::{Error, Result};
use crate::merge::{find_nontrivial_monochromatic, merge_phase, merge_phase_parallel, MergeParams, MergeStrategy};
use crate::tensor::SparseBinaryTensor;
use crate::tucker::{mdl_tucker, TuckerOptions, TuckerOutcome};
use crate::walk::{random_walk_phase_parallel, FreqMode, WalkParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub density: f64,
    pub walk_length: usize,
    /// `None` picks the default for the tensor size.
    pub num_walks: Option<usize>,
    pub freq: FreqMode,
    pub min_block: [usize; 3],
    pub strategy: MergeStrategy,
    /// Stop at this rank instead of the MDL choice.
    pub rank: Option<usize>,
    pub seed: u64,
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            density: 0.85,
            walk_length: WalkParams::DEFAULT_WALK_LENGTH,
            num_walks: None,
            freq: FreqMode::AboveMean,
            min_block: [2, 2, 2],
            strategy: MergeStrategy::Best,
            rank: None,
            seed: 0,
            threads: 1,
        }
    }
}

impl PipelineConfig {
    pub fn walk_params(&self, nnz: usize) -> WalkParams {
        WalkParams {
            density_threshold: self.density,
            walk_length: self.walk_length,
            num_walks: self
                .num_walks
                .unwrap_or_else(|| WalkParams::default_num_walks(self.walk_length, nnz)),
            freq: self.freq,
            min_block_dims: self.min_block,
            min_block_volume: self.min_volume(),
            seed: self.seed,
        }
    }

    pub fn merge_params(&self) -> MergeParams {
        MergeParams {
            density_threshold: self.density,
            min_block_dims: self.min_block,
            min_block_volume: self.min_volume(),
            strategy: self.strategy,
            seed: self.seed,
        }
    }

    fn min_volume(&self) -> u64 {
        self.min_block.iter().map(|&s| s as u64).product()
    }

    pub fn validate(&self) -> Result<()> {
        self.walk_params(1).validate()?;
        self.merge_params().validate()?;
        if self.threads == 0 {
            return Err(Error::invalid("threads must be positive"));
        }
        if self.rank == Some(0) {
            return Err(Error::invalid("rank must be positive"));
        }
        Ok(())
    }

    fn run<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        if self.threads <= 1 {
            return f();
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(f)
    }
}

/// Blocks after each stage of the block search.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSearch {
    pub walk_blocks: usize,
    pub mono_blocks: usize,
    pub noise_cells: usize,
    pub merges: usize,
    pub merged: Vec<Block>,
    pub ordered: OrderedBlocks,
}

/// Walk phase, monochromatic completion, merging and greedy ordering.
pub fn find_blocks(x: &SparseBinaryTensor, cfg: &PipelineConfig) -> Result<BlockSearch> {
    cfg.validate()?;
    cfg.run(|| {
        let walk = random_walk_phase_parallel(x, &cfg.walk_params(x.nnz()), cfg.threads)?;
        let walk_blocks = walk.blocks.into_blocks();
        info!("walk phase: {} blocks", walk_blocks.len());
        let mp = cfg.merge_params();
        let mono = find_nontrivial_monochromatic(x, &walk_blocks, &mp)?;
        info!(
            "monochromatic search: {} blocks, {} noise cells",
            mono.blocks.len(),
            mono.noise.len()
        );
        let (walk_n, mono_n, noise_n) = (walk_blocks.len(), mono.blocks.len(), mono.noise.len());
        let mut all = walk_blocks;
        all.extend(mono.blocks);
        let merged = if cfg.threads > 1 {
            merge_phase_parallel(x, all, &mp)?
        } else {
            merge_phase(x, all, &mp)?
        };
        info!(
            "merge phase: {} merges, {} blocks",
            merged.merges.len(),
            merged.blocks.len()
        );
        let ordered = greedy_order(x, &merged.blocks);
        Ok(BlockSearch {
            walk_blocks: walk_n,
            mono_blocks: mono_n,
            noise_cells: noise_n,
            merges: merged.merges.len(),
            merged: merged.blocks,
            ordered,
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpResult {
    pub search: BlockSearch,
    pub decomposition: CpDecomposition,
    /// MDL records over every prefix of the ordering; `chosen_rank` is 0
    /// when no block has positive gain.
    pub report: MdlReport,
    pub boolean_error: u64,
}

pub fn factorize_cp(x: &SparseBinaryTensor, cfg: &PipelineConfig) -> Result<CpResult> {
    let search = find_blocks(x, cfg)?;
    let blocks = &search.ordered.blocks;
    let (mut decomposition, report) = if blocks.is_empty() {
        (
            CpDecomposition::from_blocks(x.dims(), &[])?,
            MdlReport {
                records: Vec::new(),
                chosen_rank: 0,
            },
        )
    } else {
        select_rank(x, blocks)?
    };
    if let Some(r) = cfg.rank {
        decomposition = CpDecomposition::from_blocks(x.dims(), &blocks[..r.min(blocks.len())])?;
    }
    let boolean_error = x.xor_count(&decomposition.reconstruct())?;
    info!("CP rank {} with error {}", decomposition.rank(), boolean_error);
    Ok(CpResult {
        search,
        decomposition,
        report,
        boolean_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuckerResult {
    /// `None` when the blocks were supplied by the caller.
    pub search: Option<BlockSearch>,
    pub blocks: Vec<Block>,
    /// `None` when there are no blocks to start from.
    pub outcome: Option<TuckerOutcome>,
}

/// Tucker compression of the given blocks, or of the ordered blocks the
/// search finds when `blocks` is `None`.
pub fn factorize_tucker(
    x: &SparseBinaryTensor,
    cfg: &PipelineConfig,
    blocks: Option<Vec<Block>>,
    opts: TuckerOptions,
) -> Result<TuckerResult> {
    let (search, blocks) = match blocks {
        Some(b) => {
            cfg.validate()?;
            (None, b)
        }
        None => {
            let s = find_blocks(x, cfg)?;
            let b = s.ordered.blocks.clone();
            (Some(s), b)
        }
    };
    let outcome = if blocks.is_empty() {
        None
    } else {
        Some(mdl_tucker(x, &blocks, opts)?)
    };
    Ok(TuckerResult {
        search,
        blocks,
        outcome,
    })
}
