//! Operational and embodied energy accounting, net energy demand, and billing
//! policies.
//!
//! Embodied energy of a task amortizes each hardware unit's total embodied
//! energy over its lifetime: `sum_i TBE_i * latency_i / lifetime_i`.
//! Operational energy adds cooling (PUE overhead) and power-delivery loss on
//! top of the dynamic draw of the units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traces::EnergyTrace;

#[derive(Debug, Error, PartialEq)]
pub enum CarbonError {
    #[error("unit {0}: lifetime must be positive")]
    ZeroLifetime(String),
    #[error("unit {0}: negative latency")]
    NegativeLatency(String),
    #[error("duty factor {0} outside [0,1]")]
    BadDuty(f64),
    #[error("pue {0} must be >= 1")]
    BadPue(f64),
    #[error("delivery loss fraction {0} outside [0,1)")]
    BadDeliveryLoss(f64),
    #[error("traces are misaligned")]
    Misaligned,
    #[error("multiplier curve must start at (0, 1) and be non-decreasing")]
    BadCurve,
    #[error("negative energy input")]
    NegativeEnergy,
    #[error("price must be non-negative")]
    BadPrice,
    #[error("discount fraction {0} outside [0,1]")]
    BadDiscount(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HardwareKind {
    #[serde(rename = "CPU")]
    Cpu,
    #[serde(rename = "GPU")]
    Gpu,
    #[serde(rename = "PIM")]
    Pim,
    #[serde(rename = "SSD")]
    Ssd,
    #[serde(rename = "NET")]
    Net,
}

/// One piece of hardware with its embodied-energy attributes. Catalogs are
/// plain JSON arrays of these, joules/seconds/watts as numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HardwareUnit {
    pub id: String,
    pub kind: HardwareKind,
    /// Total embodied energy over the whole hardware lifecycle, joules.
    pub tbe_j: f64,
    /// Service lifetime, seconds.
    pub lifetime_s: f64,
    pub power_active_w: f64,
    pub power_idle_w: f64,
    pub recycled: bool,
}

pub fn load_catalog(json: &str) -> Result<Vec<HardwareUnit>, serde_json::Error> {
    serde_json::from_str(json)
}

/// Embodied energy charged to a task: `sum TBE_i * latency_i / lifetime_i`.
pub fn embodied_energy(used: &[(&HardwareUnit, f64)]) -> Result<f64, CarbonError> {
    embodied_energy_split(used).map(|s| s.total())
}

/// Embodied energy split by the recycled flag, for discount policies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EmbodiedSplit {
    pub recycled_j: f64,
    pub new_j: f64,
}

impl EmbodiedSplit {
    pub fn total(&self) -> f64 {
        self.recycled_j + self.new_j
    }
}

pub fn embodied_energy_split(used: &[(&HardwareUnit, f64)]) -> Result<EmbodiedSplit, CarbonError> {
    let mut split = EmbodiedSplit::default();
    for (unit, latency) in used {
        if unit.lifetime_s <= 0.0 {
            return Err(CarbonError::ZeroLifetime(unit.id.clone()));
        }
        if *latency < 0.0 {
            return Err(CarbonError::NegativeLatency(unit.id.clone()));
        }
        let share = unit.tbe_j * latency / unit.lifetime_s;
        if unit.recycled {
            split.recycled_j += share;
        } else {
            split.new_j += share;
        }
    }
    Ok(split)
}

/// A unit's share of wall time and how much of it is spent active.
#[derive(Debug, Clone)]
pub struct UnitUsage<'a> {
    pub unit: &'a HardwareUnit,
    /// Wall-clock seconds the unit is powered for the task.
    pub latency_s: f64,
    /// Fraction of that time spent in the active power state.
    pub duty: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Overheads {
    pub cooling_j: f64,
    pub delivery_loss_j: f64,
    pub idle_j: f64,
}

/// Full energy breakdown of a task: active per-unit energy, overheads, and
/// the embodied share.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyBreakdown {
    /// (unit id, active joules).
    pub per_unit_j: Vec<(String, f64)>,
    pub overheads: Overheads,
    pub e_ope_j: f64,
    pub e_emb_j: f64,
}

impl EnergyBreakdown {
    /// The defining identity: operational energy is the sum of per-unit
    /// active energy plus all overheads.
    pub fn is_consistent(&self) -> bool {
        let parts: f64 = self.per_unit_j.iter().map(|(_, j)| j).sum::<f64>()
            + self.overheads.idle_j
            + self.overheads.cooling_j
            + self.overheads.delivery_loss_j;
        (self.e_ope_j - parts).abs() <= 1e-9 * self.e_ope_j.max(1.0)
    }
}

/// Operational energy with cooling and delivery overheads.
///
/// dynamic = sum latency*(duty*P_active + (1-duty)*P_idle), cooling adds
/// (pue-1) of that, and the delivered total divides by (1 - delivery loss).
pub fn operational_energy(
    usages: &[UnitUsage],
    pue: f64,
    delivery_loss_fraction: f64,
) -> Result<EnergyBreakdown, CarbonError> {
    if pue < 1.0 {
        return Err(CarbonError::BadPue(pue));
    }
    if !(0.0..1.0).contains(&delivery_loss_fraction) {
        return Err(CarbonError::BadDeliveryLoss(delivery_loss_fraction));
    }
    let mut per_unit_j = Vec::with_capacity(usages.len());
    let mut idle_j = 0.0;
    for u in usages {
        if !(0.0..=1.0).contains(&u.duty) {
            return Err(CarbonError::BadDuty(u.duty));
        }
        if u.latency_s < 0.0 {
            return Err(CarbonError::NegativeLatency(u.unit.id.clone()));
        }
        per_unit_j.push((u.unit.id.clone(), u.latency_s * u.duty * u.unit.power_active_w));
        idle_j += u.latency_s * (1.0 - u.duty) * u.unit.power_idle_w;
    }
    let dynamic: f64 = per_unit_j.iter().map(|(_, j)| j).sum::<f64>() + idle_j;
    let cooling_j = dynamic * (pue - 1.0);
    let delivered = (dynamic + cooling_j) / (1.0 - delivery_loss_fraction);
    Ok(EnergyBreakdown {
        per_unit_j,
        overheads: Overheads {
            cooling_j,
            delivery_loss_j: delivered - dynamic - cooling_j,
            idle_j,
        },
        e_ope_j: delivered,
        e_emb_j: 0.0,
    })
}

/// Demand minus renewable at one instant; negative means surplus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetDemandPoint {
    pub timestamp: i64,
    pub demand_mw: f64,
    pub renewable_mw: f64,
    pub net_mw: f64,
}

/// Pointwise `demand - renewable` over two aligned traces.
pub fn net_demand(demand: &EnergyTrace, renewable: &EnergyTrace) -> Result<Vec<NetDemandPoint>, CarbonError> {
    if !demand.aligned_with(renewable) {
        return Err(CarbonError::Misaligned);
    }
    Ok(demand
        .samples()
        .iter()
        .zip(renewable.samples())
        .map(|(d, r)| NetDemandPoint {
            timestamp: d.timestamp,
            demand_mw: d.value,
            renewable_mw: r.value,
            net_mw: d.value - r.value,
        })
        .collect())
}

/// Piecewise-linear, non-decreasing multiplier over mean positive net demand,
/// anchored at mult(0) = 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiplierCurve {
    /// (net demand MW, multiplier), ascending in net demand; first point (0, 1).
    pub points: Vec<(f64, f64)>,
}

impl MultiplierCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, CarbonError> {
        let ok = points.first().map(|&(x, y)| x == 0.0 && y == 1.0).unwrap_or(false)
            && points.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1);
        if !ok {
            return Err(CarbonError::BadCurve);
        }
        Ok(Self { points })
    }

    pub fn eval(&self, net_mw: f64) -> f64 {
        let x = net_mw.max(0.0);
        let last = self.points.len() - 1;
        if x >= self.points[last].0 {
            return self.points[last].1;
        }
        let hi = self.points.iter().position(|&(px, _)| px > x).unwrap();
        let (x0, y0) = self.points[hi - 1];
        let (x1, y1) = self.points[hi];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// How a task's energy turns into credits.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum BillingPolicy {
    /// price * (E_ope + E_emb).
    FlatRate { price_per_joule: f64 },
    /// price * E_emb + price * E_ope * mult(mean positive net over window).
    CarbonAware {
        base_price_per_joule: f64,
        multiplier: MultiplierCurve,
    },
    /// Wraps another policy, scaling the recycled share of E_emb by
    /// (1 - discount).
    RecycledDiscount {
        inner: Box<BillingPolicy>,
        discount: f64,
    },
}

impl BillingPolicy {
    fn validate(&self) -> Result<(), CarbonError> {
        match self {
            BillingPolicy::FlatRate { price_per_joule } => {
                if *price_per_joule < 0.0 {
                    return Err(CarbonError::BadPrice);
                }
            }
            BillingPolicy::CarbonAware { base_price_per_joule, multiplier } => {
                if *base_price_per_joule < 0.0 {
                    return Err(CarbonError::BadPrice);
                }
                MultiplierCurve::new(multiplier.points.clone())?;
            }
            BillingPolicy::RecycledDiscount { inner, discount } => {
                if !(0.0..=1.0).contains(discount) {
                    return Err(CarbonError::BadDiscount(*discount));
                }
                inner.validate()?;
            }
        }
        Ok(())
    }
}

/// Credits charged for a task given its energy use and the net-demand series
/// over its window.
pub fn charge(
    e_ope_j: f64,
    e_emb: EmbodiedSplit,
    net_over_window: &[NetDemandPoint],
    policy: &BillingPolicy,
) -> Result<f64, CarbonError> {
    if e_ope_j < 0.0 || e_emb.recycled_j < 0.0 || e_emb.new_j < 0.0 {
        return Err(CarbonError::NegativeEnergy);
    }
    policy.validate()?;
    Ok(charge_inner(e_ope_j, e_emb, net_over_window, policy))
}

fn charge_inner(e_ope_j: f64, e_emb: EmbodiedSplit, net: &[NetDemandPoint], policy: &BillingPolicy) -> f64 {
    match policy {
        BillingPolicy::FlatRate { price_per_joule } => price_per_joule * (e_ope_j + e_emb.total()),
        BillingPolicy::CarbonAware { base_price_per_joule, multiplier } => {
            let mean_positive_net = if net.is_empty() {
                0.0
            } else {
                net.iter().map(|p| p.net_mw.max(0.0)).sum::<f64>() / net.len() as f64
            };
            base_price_per_joule * e_emb.total()
                + base_price_per_joule * e_ope_j * multiplier.eval(mean_positive_net)
        }
        BillingPolicy::RecycledDiscount { inner, discount } => {
            let discounted = EmbodiedSplit {
                recycled_j: e_emb.recycled_j * (1.0 - discount),
                new_j: e_emb.new_j,
            };
            charge_inner(e_ope_j, discounted, net, inner)
        }
    }
}
