//! Episode-level statistics: travel-time distributions, fleet emissions,
//! and cross-method comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::LedgerEntry;

/// Travel-time distribution summary. Percentiles interpolate linearly; the
/// standard deviation is the population form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Statistics over completed-trip durations.
pub fn travel_time_stats(times: &[f64]) -> Result<TravelTimeStats> {
    if times.is_empty() {
        return Err(Error::EmptyLedger);
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("travel times are finite"));
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    Ok(TravelTimeStats {
        mean,
        std: var.sqrt(),
        min: sorted[0],
        p25: percentile(&sorted, 0.25),
        median: percentile(&sorted, 0.50),
        p75: percentile(&sorted, 0.75),
        max: *sorted.last().unwrap(),
    })
}

/// Fleet emissions: (liters per 100 km, CO2 grams per km).
pub fn aggregate_emissions(ledger: &[LedgerEntry], co2_per_liter: f64) -> Result<(f64, f64)> {
    if ledger.is_empty() {
        return Err(Error::EmptyLedger);
    }
    let total_km: f64 = ledger.iter().map(|e| e.distance_m).sum::<f64>() / 1000.0;
    if total_km <= 0.0 {
        return Err(Error::ZeroDistance);
    }
    let total_fuel: f64 = ledger.iter().map(|e| e.fuel_l).sum();
    Ok((100.0 * total_fuel / total_km, co2_per_liter * total_fuel / total_km))
}

/// Signed percent change; negative means improvement over the baseline.
pub fn percent_reduction(candidate: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::Config("percent reduction needs a nonzero baseline".into()));
    }
    Ok(100.0 * (candidate - baseline) / baseline)
}

/// One method's evaluation summary, averaged over its evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub method: String,
    pub episodes: usize,
    pub travel: TravelTimeStats,
    pub fuel_l_per_100km: f64,
    pub co2_g_per_km: f64,
    /// Mean running-vehicle count per tick across episodes (shorter episodes
    /// pad with zero running vehicles).
    pub running_series: Vec<f64>,
}

/// Average per-episode statistics into one report.
pub fn average_reports(
    method: &str,
    per_episode: &[(TravelTimeStats, f64, f64, Vec<usize>)],
) -> Result<EpisodeReport> {
    if per_episode.is_empty() {
        return Err(Error::EmptyLedger);
    }
    let n = per_episode.len() as f64;
    let mut travel = TravelTimeStats {
        mean: 0.0,
        std: 0.0,
        min: 0.0,
        p25: 0.0,
        median: 0.0,
        p75: 0.0,
        max: 0.0,
    };
    let mut fuel = 0.0;
    let mut co2 = 0.0;
    let longest = per_episode.iter().map(|e| e.3.len()).max().unwrap();
    let mut series = vec![0.0; longest];
    for (t, f, c, s) in per_episode {
        travel.mean += t.mean / n;
        travel.std += t.std / n;
        travel.min += t.min / n;
        travel.p25 += t.p25 / n;
        travel.median += t.median / n;
        travel.p75 += t.p75 / n;
        travel.max += t.max / n;
        fuel += f / n;
        co2 += c / n;
        for (i, &r) in s.iter().enumerate() {
            series[i] += r as f64 / n;
        }
    }
    Ok(EpisodeReport {
        method: method.to_string(),
        episodes: per_episode.len(),
        travel,
        fuel_l_per_100km: fuel,
        co2_g_per_km: co2,
        running_series: series,
    })
}
