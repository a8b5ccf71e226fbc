//! A minimal page-mapped flash translation layer over a simulated recycled
//! chip: out-of-place writes, greedy garbage collection, wear tracking, and
//! policy-driven capacity degradation.
//!
//! Blocks carry pre-recycle wear. After every erase the victim's raw bit
//! error rate is re-evaluated at its effective cycle count (raw cycles
//! divided by the endurance multiplier of its current state count); crossing
//! the policy threshold steps the block one level down the state-count
//! sequence, with per-level group encodings chosen for best utilization.
//! Comparison policies keep the full state count and retire on crossing
//! (fixed TLC) or take a single chip-wide 50% capacity cut (MLC-to-SLC
//! style halving).
//!
//! Capacity is reported in bytes over all non-retired blocks. A block whose
//! degraded page no longer fits the workload's payload stays readable but
//! drops out of allocation, so the mapping strangles before the byte
//! capacity necessarily hits the floor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frac::{self, PageGeometry, RberModel};

#[derive(Debug, Error, PartialEq)]
pub enum FtlError {
    #[error("wear range low {lo} exceeds high {hi}")]
    BadWearRange { lo: u64, hi: u64 },
    #[error("geometry fields must be positive")]
    BadGeometry,
    #[error("workload invalid: {0}")]
    BadWorkload(String),
    #[error("logical page {0} outside the exported span")]
    LogicalOutOfSpan(u64),
    #[error("no space left after garbage collection")]
    MappingFull,
    #[error("no garbage collection victim with invalid pages")]
    NoVictim,
    #[error("block {0} does not exist")]
    NoSuchBlock(usize),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChipGeometry {
    pub blocks_per_chip: u32,
    pub pages_per_block: u32,
    pub cells_per_page: u32,
}

impl Default for ChipGeometry {
    fn default() -> Self {
        Self { blocks_per_chip: 256, pages_per_block: 64, cells_per_page: 10923 }
    }
}

/// Uniform pre-recycle wear range, P/E cycles.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WearRange {
    pub lo: u64,
    pub hi: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageState {
    Free,
    Valid { logical: u64, token: u64, bytes: u32 },
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockLevel {
    /// Operating with m threshold-voltage states per cell.
    States(u8),
    /// After the chip-wide MLC-to-SLC style halving event.
    Halved,
    Retired,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub id: usize,
    pub erase_count: u64,
    pub level: BlockLevel,
    pub page_capacity_bytes: u64,
    pages: Vec<PageState>,
    write_cursor: u32,
    valid_pages: u32,
    invalid_pages: u32,
}

impl Block {
    fn free_pages(&self, pages_per_block: u32) -> u32 {
        pages_per_block - self.write_cursor
    }

    fn is_fully_free(&self) -> bool {
        self.write_cursor == 0
    }
}

/// Which degradation rule applies when a block crosses the error threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegradeMode {
    /// Step down the state-count sequence 8..=2, then retire.
    Frac,
    /// No degradation: retire on first crossing.
    FixedTlc,
    /// One chip-wide 50% capacity step, then retire on the next crossing.
    MlcToSlc,
}

#[derive(Debug, Clone)]
pub struct DegradePolicy {
    pub mode: DegradeMode,
    pub rber_threshold: f64,
    /// Fraction of the initial capacity below which the chip is dead.
    pub capacity_floor: f64,
    pub rber_model: RberModel,
}

impl DegradePolicy {
    pub fn frac() -> Self {
        Self {
            mode: DegradeMode::Frac,
            rber_threshold: 0.012,
            capacity_floor: 0.25,
            rber_model: RberModel::default(),
        }
    }

    pub fn fixed_tlc() -> Self {
        Self { mode: DegradeMode::FixedTlc, ..Self::frac() }
    }

    pub fn mlc_to_slc() -> Self {
        Self { mode: DegradeMode::MlcToSlc, ..Self::frac() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeathCause {
    CapacityFloor,
    MappingFull,
    /// The run hit its optional write budget while the chip was still alive.
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TimelinePoint {
    pub host_bytes_written: u64,
    pub exported_capacity_bytes: u64,
    pub mean_m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LifetimeReport {
    pub total_host_bytes_written: u64,
    pub total_host_writes: u64,
    pub total_erases: u64,
    pub total_relocations: u64,
    pub death_cause: DeathCause,
    pub timeline: Vec<TimelinePoint>,
}

impl LifetimeReport {
    /// Number of maximal runs of equal capacity in the timeline.
    pub fn capacity_plateaus(&self) -> usize {
        let mut plateaus = 0;
        let mut last = None;
        for p in &self.timeline {
            if last != Some(p.exported_capacity_bytes) {
                plateaus += 1;
                last = Some(p.exported_capacity_bytes);
            }
        }
        plateaus
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("host_bytes_written,exported_capacity_bytes,mean_m\n");
        for p in &self.timeline {
            out.push_str(&format!(
                "{},{},{}\n",
                p.host_bytes_written, p.exported_capacity_bytes, p.mean_m
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessPattern {
    Uniform,
    /// Zipf-distributed page popularity with the given exponent.
    Zipf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Workload {
    pub pattern: AccessPattern,
    pub zipf_theta: f64,
    pub write_size_bytes: u32,
    /// Number of distinct logical pages.
    pub logical_span_pages: u64,
    /// Optional cap on host writes for runs that would otherwise outlive the
    /// experiment.
    pub max_host_writes: Option<u64>,
}

impl Workload {
    /// Uniform overwrites across 80% of the chip's pages, payload sized so
    /// blocks degraded below five states leave the allocation pool.
    pub fn default_for(geometry: &ChipGeometry) -> Self {
        let pages = geometry.blocks_per_chip as u64 * geometry.pages_per_block as u64;
        Self {
            pattern: AccessPattern::Uniform,
            zipf_theta: 0.99,
            write_size_bytes: 2816,
            logical_span_pages: pages * 8 / 10,
            max_host_writes: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ChipStats {
    pub host_writes: u64,
    pub host_bytes: u64,
    pub erases: u64,
    pub relocations: u64,
}

pub struct FlashChip {
    geometry: ChipGeometry,
    blocks: Vec<Block>,
    l2p: Vec<Option<(u32, u32)>>,
    host_active: Option<usize>,
    gc_active: Option<usize>,
    policy: DegradePolicy,
    halved: bool,
    /// Page capacity in bytes for m = 2..=8 at the best group size <= 8.
    capacity_by_m: [u64; 9],
    initial_capacity_bytes: u64,
    exported_capacity_bytes: u64,
    next_token: u64,
    pub stats: ChipStats,
    gc_reserve_blocks: usize,
}

/// Builds a recycled chip with per-block wear drawn uniformly from the
/// configured range; deterministic for a fixed seed.
pub fn init_chip(geometry: ChipGeometry, wear: WearRange, seed: u64) -> Result<FlashChip, FtlError> {
    if wear.lo > wear.hi {
        return Err(FtlError::BadWearRange { lo: wear.lo, hi: wear.hi });
    }
    if geometry.blocks_per_chip == 0 || geometry.pages_per_block == 0 || geometry.cells_per_page == 0 {
        return Err(FtlError::BadGeometry);
    }
    let page_geometry = PageGeometry { cells_per_page: geometry.cells_per_page };
    let mut capacity_by_m = [0u64; 9];
    for m in 2..=8u8 {
        let alpha = frac::best_alpha(m, 8).expect("valid m");
        capacity_by_m[m as usize] =
            frac::page_capacity_bytes(m, alpha, &page_geometry).expect("valid spec");
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let blocks: Vec<Block> = (0..geometry.blocks_per_chip as usize)
        .map(|id| Block {
            id,
            erase_count: rng.gen_range(wear.lo..=wear.hi),
            level: BlockLevel::States(8),
            page_capacity_bytes: capacity_by_m[8],
            pages: vec![PageState::Free; geometry.pages_per_block as usize],
            write_cursor: 0,
            valid_pages: 0,
            invalid_pages: 0,
        })
        .collect();
    let initial = blocks.len() as u64 * geometry.pages_per_block as u64 * capacity_by_m[8];
    Ok(FlashChip {
        geometry,
        blocks,
        l2p: Vec::new(),
        host_active: None,
        gc_active: None,
        policy: DegradePolicy::frac(),
        halved: false,
        capacity_by_m,
        initial_capacity_bytes: initial,
        exported_capacity_bytes: initial,
        next_token: 1,
        stats: ChipStats::default(),
        gc_reserve_blocks: 2,
    })
}

impl FlashChip {
    pub fn set_policy(&mut self, policy: DegradePolicy) {
        self.policy = policy;
    }

    pub fn policy(&self) -> &DegradePolicy {
        &self.policy
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn geometry(&self) -> ChipGeometry {
        self.geometry
    }

    pub fn initial_capacity_bytes(&self) -> u64 {
        self.initial_capacity_bytes
    }

    pub fn exported_capacity_bytes(&self) -> u64 {
        self.exported_capacity_bytes
    }

    /// Mean state count over non-retired blocks; halved blocks count as 2.
    pub fn mean_m(&self) -> f64 {
        let mut sum = 0u64;
        let mut n = 0u64;
        for b in &self.blocks {
            match b.level {
                BlockLevel::States(m) => {
                    sum += m as u64;
                    n += 1;
                }
                BlockLevel::Halved => {
                    sum += 2;
                    n += 1;
                }
                BlockLevel::Retired => {}
            }
        }
        if n == 0 {
            0.0
        } else {
            sum as f64 / n as f64
        }
    }

    /// Token of the payload most recently written to a logical page.
    pub fn read_logical(&self, logical: u64) -> Option<u64> {
        let (b, p) = (*self.l2p.get(logical as usize)?)?;
        match self.blocks[b as usize].pages[p as usize] {
            PageState::Valid { logical: l, token, .. } if l == logical => Some(token),
            _ => None,
        }
    }

    pub fn live_pages(&self) -> u64 {
        self.blocks.iter().map(|b| b.valid_pages as u64).sum()
    }

    fn recompute_capacity(&mut self) {
        self.exported_capacity_bytes = self
            .blocks
            .iter()
            .map(|b| b.page_capacity_bytes * self.geometry.pages_per_block as u64)
            .sum();
    }

    fn free_block_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.level != BlockLevel::Retired && b.is_fully_free())
            .count()
    }

    /// Fully free, non-retired block with pages big enough for the payload,
    /// least worn first.
    fn take_free_block(&mut self, payload: u32) -> Option<usize> {
        self.blocks
            .iter()
            .filter(|b| {
                b.level != BlockLevel::Retired
                    && b.is_fully_free()
                    && b.page_capacity_bytes >= payload as u64
                    && Some(b.id) != self.host_active
                    && Some(b.id) != self.gc_active
            })
            .min_by_key(|b| (b.erase_count, b.id))
            .map(|b| b.id)
    }

    fn append_page(&mut self, block_id: usize, state: PageState) -> (u32, u32) {
        let block = &mut self.blocks[block_id];
        let page = block.write_cursor;
        debug_assert!(page < self.geometry.pages_per_block);
        debug_assert_eq!(block.pages[page as usize], PageState::Free);
        block.pages[page as usize] = state;
        block.write_cursor += 1;
        block.valid_pages += 1;
        (block_id as u32, page)
    }

    fn invalidate(&mut self, block: u32, page: u32) {
        let b = &mut self.blocks[block as usize];
        debug_assert!(matches!(b.pages[page as usize], PageState::Valid { .. }));
        b.pages[page as usize] = PageState::Invalid;
        b.valid_pages -= 1;
        b.invalid_pages += 1;
    }

    fn active_block_usable(&self, active: Option<usize>, payload: u32) -> Option<usize> {
        let id = active?;
        let block = &self.blocks[id];
        (block.level != BlockLevel::Retired
            && block.free_pages(self.geometry.pages_per_block) > 0
            && block.page_capacity_bytes >= payload as u64)
            .then_some(id)
    }

    /// A destination page on the host-write open block, opening a new one
    /// (and garbage collecting, iteratively) as needed.
    fn allocate_host(&mut self, payload: u32) -> Result<usize, FtlError> {
        if let Some(id) = self.active_block_usable(self.host_active, payload) {
            return Ok(id);
        }
        let mut attempts = 0;
        loop {
            if let Some(id) = self.take_free_block(payload) {
                self.host_active = Some(id);
                return Ok(id);
            }
            if attempts >= self.blocks.len() {
                return Err(FtlError::MappingFull);
            }
            attempts += 1;
            gc_once(self)?;
        }
    }

    /// Relocation destinations come straight from the free reserve; garbage
    /// collection must never recurse into itself.
    fn allocate_gc(&mut self, payload: u32) -> Result<usize, FtlError> {
        if let Some(id) = self.active_block_usable(self.gc_active, payload) {
            return Ok(id);
        }
        match self.take_free_block(payload) {
            Some(id) => {
                self.gc_active = Some(id);
                Ok(id)
            }
            None => Err(FtlError::MappingFull),
        }
    }
}

/// Out-of-place host write of one logical page. Garbage collection is
/// triggered opportunistically when the pool of fully free blocks falls
/// below the reserve.
pub fn host_write(chip: &mut FlashChip, logical: u64, payload_size: u32) -> Result<(), FtlError> {
    if payload_size as u64 > chip.capacity_by_m[8] {
        return Err(FtlError::BadWorkload(format!(
            "payload {payload_size} exceeds the pristine page capacity"
        )));
    }
    let block_id = chip.allocate_host(payload_size)?;
    if chip.l2p.len() <= logical as usize {
        chip.l2p.resize(logical as usize + 1, None);
    }
    let token = chip.next_token;
    chip.next_token += 1;
    let new_loc =
        chip.append_page(block_id, PageState::Valid { logical, token, bytes: payload_size });
    if let Some((b, p)) = chip.l2p[logical as usize].replace(new_loc) {
        chip.invalidate(b, p);
    }
    chip.stats.host_writes += 1;
    chip.stats.host_bytes += payload_size as u64;

    if chip.free_block_count() < chip.gc_reserve_blocks {
        // Best effort: stop when no victim has anything to reclaim.
        let _ = gc_once(chip);
    }
    Ok(())
}

/// One garbage-collection pass: the victim with the most invalid pages
/// (ties to the least-worn block) has its valid pages relocated, is erased,
/// and is then re-evaluated for degradation.
pub fn gc_once(chip: &mut FlashChip) -> Result<(), FtlError> {
    let victim = chip
        .blocks
        .iter()
        .filter(|b| {
            b.invalid_pages > 0
                && b.level != BlockLevel::Retired
                && Some(b.id) != chip.host_active
                && Some(b.id) != chip.gc_active
        })
        .max_by(|a, b| {
            (a.invalid_pages, std::cmp::Reverse(a.erase_count), std::cmp::Reverse(a.id))
                .cmp(&(b.invalid_pages, std::cmp::Reverse(b.erase_count), std::cmp::Reverse(b.id)))
        })
        .map(|b| b.id)
        .ok_or(FtlError::NoVictim)?;

    // Relocate live data.
    let pages_per_block = chip.geometry.pages_per_block;
    for page in 0..pages_per_block {
        let state = chip.blocks[victim].pages[page as usize];
        if let PageState::Valid { logical, token, bytes } = state {
            let dest = chip.allocate_gc(bytes)?;
            let new_loc = chip.append_page(dest, PageState::Valid { logical, token, bytes });
            chip.l2p[logical as usize] = Some(new_loc);
            chip.invalidate(victim as u32, page);
            chip.stats.relocations += 1;
        }
    }

    // Erase.
    let block = &mut chip.blocks[victim];
    debug_assert_eq!(block.valid_pages, 0);
    block.pages.fill(PageState::Free);
    block.write_cursor = 0;
    block.invalid_pages = 0;
    block.erase_count += 1;
    chip.stats.erases += 1;

    maybe_degrade(chip, victim)?;
    Ok(())
}

/// Post-erase health check: if the block's error rate at its effective
/// cycle count crosses the policy threshold, apply the policy's capacity
/// response.
pub fn maybe_degrade(chip: &mut FlashChip, block_id: usize) -> Result<(), FtlError> {
    if block_id >= chip.blocks.len() {
        return Err(FtlError::NoSuchBlock(block_id));
    }
    let (m_eval, wear_m) = match chip.blocks[block_id].level {
        BlockLevel::States(m) => (m, m),
        BlockLevel::Halved => (2, 2),
        BlockLevel::Retired => return Ok(()),
    };
    let multiplier = frac::endurance_multiplier(wear_m).expect("valid m");
    let effective = chip.blocks[block_id].erase_count as f64 / multiplier;
    let rber = chip.policy.rber_model.rber(m_eval, effective).expect("valid m");
    if rber <= chip.policy.rber_threshold {
        return Ok(());
    }
    match chip.policy.mode {
        DegradeMode::Frac => {
            let block = &mut chip.blocks[block_id];
            match block.level {
                BlockLevel::States(m) if m > 2 => {
                    block.level = BlockLevel::States(m - 1);
                    block.page_capacity_bytes = chip.capacity_by_m[(m - 1) as usize];
                }
                _ => retire(block),
            }
        }
        DegradeMode::FixedTlc => retire(&mut chip.blocks[block_id]),
        DegradeMode::MlcToSlc => {
            if chip.halved {
                retire(&mut chip.blocks[block_id]);
            } else {
                // Single chip-wide capacity step to half the pristine page.
                chip.halved = true;
                let half = chip.capacity_by_m[8] / 2;
                for block in &mut chip.blocks {
                    if block.level != BlockLevel::Retired {
                        block.level = BlockLevel::Halved;
                        block.page_capacity_bytes = half;
                    }
                }
            }
        }
    }
    chip.recompute_capacity();
    Ok(())
}

fn retire(block: &mut Block) {
    debug_assert_eq!(block.valid_pages, 0, "only fully reclaimed blocks retire");
    block.level = BlockLevel::Retired;
    block.page_capacity_bytes = 0;
    block.pages.fill(PageState::Invalid);
    block.write_cursor = 0;
    block.invalid_pages = 0;
}

/// Cumulative-weight Zipf sampler over ranks 1..=span.
struct ZipfSampler {
    cumulative: Vec<f64>,
}

impl ZipfSampler {
    fn new(span: u64, theta: f64) -> Self {
        let mut cumulative = Vec::with_capacity(span as usize);
        let mut acc = 0.0;
        for rank in 1..=span {
            acc += 1.0 / (rank as f64).powf(theta);
            cumulative.push(acc);
        }
        let total = acc;
        for c in &mut cumulative {
            *c /= total;
        }
        Self { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.gen();
        self.cumulative.partition_point(|&c| c < u) as u64
    }
}

/// Replays the workload until the chip dies (or the optional write budget
/// runs out) and reports the capacity timeline. Deterministic per seed.
pub fn run_lifetime(
    mut chip: FlashChip,
    workload: &Workload,
    policy: DegradePolicy,
    seed: u64,
) -> Result<LifetimeReport, FtlError> {
    let total_pages =
        chip.geometry.blocks_per_chip as u64 * chip.geometry.pages_per_block as u64;
    // 10% overprovisioning: the logical span must leave the FTL headroom.
    if workload.logical_span_pages == 0
        || workload.logical_span_pages * 11 > total_pages * 10
    {
        return Err(FtlError::BadWorkload(format!(
            "logical span {} exceeds the overprovisioned page budget",
            workload.logical_span_pages
        )));
    }
    if workload.write_size_bytes == 0
        || workload.write_size_bytes as u64 > chip.capacity_by_m[8]
    {
        return Err(FtlError::BadWorkload("write size must fit a pristine page".into()));
    }
    chip.set_policy(policy);

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let zipf = match workload.pattern {
        AccessPattern::Zipf => Some(ZipfSampler::new(workload.logical_span_pages, workload.zipf_theta)),
        AccessPattern::Uniform => None,
    };

    let sample_every = 16_384u64;
    let mut timeline = vec![TimelinePoint {
        host_bytes_written: 0,
        exported_capacity_bytes: chip.exported_capacity_bytes(),
        mean_m: chip.mean_m(),
    }];
    let mut last_capacity = chip.exported_capacity_bytes();
    let floor_bytes =
        (chip.initial_capacity_bytes() as f64 * chip.policy.capacity_floor) as u64;

    let death_cause;
    loop {
        if let Some(budget) = workload.max_host_writes {
            if chip.stats.host_writes >= budget {
                death_cause = DeathCause::BudgetExhausted;
                break;
            }
        }
        let logical = match &zipf {
            Some(z) => z.sample(&mut rng),
            None => rng.gen_range(0..workload.logical_span_pages),
        };
        match host_write(&mut chip, logical, workload.write_size_bytes) {
            Ok(()) => {}
            Err(FtlError::MappingFull) | Err(FtlError::NoVictim) => {
                death_cause = DeathCause::MappingFull;
                break;
            }
            Err(e) => return Err(e),
        }
        let capacity = chip.exported_capacity_bytes();
        if capacity != last_capacity || chip.stats.host_writes.is_multiple_of(sample_every)
        {
            timeline.push(TimelinePoint {
                host_bytes_written: chip.stats.host_bytes,
                exported_capacity_bytes: capacity,
                mean_m: chip.mean_m(),
            });
            last_capacity = capacity;
        }
        if capacity < floor_bytes {
            death_cause = DeathCause::CapacityFloor;
            break;
        }
    }

    timeline.push(TimelinePoint {
        host_bytes_written: chip.stats.host_bytes,
        exported_capacity_bytes: chip.exported_capacity_bytes(),
        mean_m: chip.mean_m(),
    });
    Ok(LifetimeReport {
        total_host_bytes_written: chip.stats.host_bytes,
        total_host_writes: chip.stats.host_writes,
        total_erases: chip.stats.erases,
        total_relocations: chip.stats.relocations,
        death_cause,
        timeline,
    })
}
