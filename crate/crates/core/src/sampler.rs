//! Training-tile selection: rainfall and extreme-value acceptance rules,
//! spacing between tiles, per-region caps and evaluation-hour choice.

use crate::error::{Error, Result};
use crate::grid::{check_same_geometry, format_valid_time, GridField, TileSpec, VarTag};
use chrono::{DateTime, Datelike, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use std::collections::BTreeMap;

/// Acceptance thresholds and draw limits for one sampling pass. The ARI
/// map gives the local exceedance threshold used by the extreme branch.
#[derive(Debug, Clone)]
pub struct SamplingCriteria<'a> {
    pub min_coverage_fraction: f64,
    pub ari_map: &'a GridField,
    pub min_spacing_km: f64,
    pub max_candidates_per_timestep: usize,
    pub max_retained_per_timestep: usize,
    pub tile_size_km: f64,
}

impl<'a> SamplingCriteria<'a> {
    pub fn new(ari_map: &'a GridField) -> Self {
        SamplingCriteria {
            min_coverage_fraction: 0.25,
            ari_map,
            min_spacing_km: 30.0,
            max_candidates_per_timestep: 50,
            max_retained_per_timestep: 20,
            tile_size_km: 512.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_coverage_fraction > 0.0 && self.min_coverage_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "coverage fraction must lie in (0, 1], got {}",
                self.min_coverage_fraction
            )));
        }
        if !(self.min_spacing_km > 0.0) {
            return Err(Error::Config(format!(
                "tile spacing must be positive, got {}",
                self.min_spacing_km
            )));
        }
        if self.max_retained_per_timestep > self.max_candidates_per_timestep {
            return Err(Error::Config(format!(
                "cannot retain {} tiles from {} candidates",
                self.max_retained_per_timestep, self.max_candidates_per_timestep
            )));
        }
        if !(self.tile_size_km > 0.0) {
            return Err(Error::Config(format!(
                "tile size must be positive, got {} km",
                self.tile_size_km
            )));
        }
        if self.ari_map.var != VarTag::Ari {
            return Err(Error::Shape(format!(
                "criteria need an ARI map, got {}",
                self.ari_map.var.as_str()
            )));
        }
        Ok(())
    }

    /// Tile edge in pixels on the given grid (nearest whole pixel).
    pub fn tile_size_px(&self, dx_km: f64) -> usize {
        (self.tile_size_km / dx_km).round().max(1.0) as usize
    }
}

/// Why a tile passed or failed the acceptance rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileReason {
    Coverage,
    Ari,
    Dry,
}

impl TileReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TileReason::Coverage => "coverage",
            TileReason::Ari => "ari",
            TileReason::Dry => "dry",
        }
    }
}

/// One accepted tile: where, when and which rule admitted it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledTile {
    pub valid_time: DateTime<Utc>,
    pub spec: TileSpec,
    pub reason: TileReason,
}

/// Apply the acceptance rules to one tile: wet on at least the configured
/// fraction of its non-missing pixels, or any pixel above its local ARI
/// threshold. Returns the verdict with the branch that decided it.
pub fn tile_valid(
    field: &GridField,
    tile: &TileSpec,
    criteria: &SamplingCriteria,
) -> Result<(bool, TileReason)> {
    criteria.validate()?;
    check_same_geometry(&field.geom, &criteria.ari_map.geom)?;
    if !tile.fits(&field.geom) {
        return Err(Error::Shape(format!(
            "tile {}+{} x {}+{} outside the {}x{} domain",
            tile.row0, tile.size, tile.col0, tile.size, field.geom.ny, field.geom.nx
        )));
    }

    let mut wet = 0u64;
    let mut present = 0u64;
    let mut exceeds = false;
    for i in tile.row0..tile.row0 + tile.size {
        for j in tile.col0..tile.col0 + tile.size {
            let v = field.get(i, j);
            if v.is_nan() {
                continue;
            }
            present += 1;
            if v > 0.0 {
                wet += 1;
            }
            let ari = criteria.ari_map.get(i, j);
            if !ari.is_nan() && v > ari {
                exceeds = true;
            }
        }
    }
    if present > 0 && wet as f64 / present as f64 >= criteria.min_coverage_fraction {
        Ok((true, TileReason::Coverage))
    } else if exceeds {
        Ok((true, TileReason::Ari))
    } else {
        Ok((false, TileReason::Dry))
    }
}

/// Draw random tile placements for one timestep, keeping those that pass
/// the acceptance rules and sit at least the minimum spacing away from
/// every tile already kept. Stops after the candidate budget is spent or
/// the retention target is reached; may keep nothing.
pub fn sample_timestep(
    field: &GridField,
    criteria: &SamplingCriteria,
    rng: &mut dyn RngCore,
) -> Result<Vec<SampledTile>> {
    criteria.validate()?;
    let g = &field.geom;
    let size = criteria.tile_size_px(g.dx_km);
    if size > g.ny || size > g.nx {
        return Err(Error::Config(format!(
            "tile of {} px does not fit in the {}x{} domain",
            size, g.ny, g.nx
        )));
    }

    let spacing2 = criteria.min_spacing_km * criteria.min_spacing_km;
    let mut kept: Vec<SampledTile> = Vec::new();
    for _ in 0..criteria.max_candidates_per_timestep {
        if kept.len() >= criteria.max_retained_per_timestep {
            break;
        }
        let row0 = rng.random_range(0..=g.ny - size);
        let col0 = rng.random_range(0..=g.nx - size);
        let spec = TileSpec::new(row0, col0, size);
        let (ok, reason) = tile_valid(field, &spec, criteria)?;
        if !ok {
            continue;
        }
        let (cy, cx) = spec.center_km(g);
        let spaced = kept.iter().all(|t| {
            let (ty, tx) = t.spec.center_km(g);
            (cy - ty).powi(2) + (cx - tx).powi(2) >= spacing2
        });
        if spaced {
            kept.push(SampledTile { valid_time: field.valid_time, spec, reason });
        }
    }
    Ok(kept)
}

/// Per-pixel region labels: an id raster plus the name behind each id.
/// Every pixel must carry an in-range integer id.
#[derive(Debug, Clone)]
pub struct RegionMap {
    field: GridField,
    names: Vec<String>,
}

impl RegionMap {
    pub fn new(field: GridField, names: Vec<String>) -> Result<Self> {
        if field.var != VarTag::Region {
            return Err(Error::Shape(format!(
                "region map needs region ids, got {}",
                field.var.as_str()
            )));
        }
        if names.is_empty() {
            return Err(Error::Config("region map needs at least one region name".into()));
        }
        for (i, v) in field.values().iter().enumerate() {
            if v.is_nan() || v.fract() != 0.0 || *v < 0.0 || *v >= names.len() as f32 {
                return Err(Error::Format(format!(
                    "pixel {i} holds region id {v}, want an integer in 0..{}",
                    names.len()
                )));
            }
        }
        Ok(RegionMap { field, names })
    }

    pub fn field(&self) -> &GridField {
        &self.field
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn region_of(&self, i: usize, j: usize) -> Result<&str> {
        if i >= self.field.geom.ny || j >= self.field.geom.nx {
            return Err(Error::Shape(format!("pixel ({i}, {j}) outside the region map")));
        }
        Ok(&self.names[self.field.get(i, j) as usize])
    }

    /// Region of the tile's center pixel (`row0 + size/2`, likewise for
    /// columns); tiles may straddle region boundaries.
    pub fn region_of_tile(&self, tile: &TileSpec) -> Result<&str> {
        if !tile.fits(&self.field.geom) {
            return Err(Error::Shape("tile outside the region map".into()));
        }
        self.region_of(tile.row0 + tile.size / 2, tile.col0 + tile.size / 2)
    }
}

/// Cap each (region, calendar month) group at `cap` tiles, keeping a
/// uniform random subset of larger groups and everything in smaller ones.
/// Output preserves pool order; the choice is deterministic per seed.
pub fn regional_balance(
    pool: &[SampledTile],
    regions: &RegionMap,
    cap: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<SampledTile>> {
    if cap == 0 {
        return Err(Error::Config("regional cap must be at least 1".into()));
    }
    let mut groups: BTreeMap<(String, i32, u32), Vec<usize>> = BTreeMap::new();
    for (idx, t) in pool.iter().enumerate() {
        let region = regions.region_of_tile(&t.spec)?.to_string();
        groups.entry((region, t.valid_time.year(), t.valid_time.month())).or_default().push(idx);
    }
    let mut keep = vec![false; pool.len()];
    for indices in groups.values() {
        if indices.len() <= cap {
            for &i in indices {
                keep[i] = true;
            }
        } else {
            for &i in indices.choose_multiple(rng, cap) {
                keep[i] = true;
            }
        }
    }
    Ok(pool.iter().zip(&keep).filter(|(_, k)| **k).map(|(t, _)| t.clone()).collect())
}

/// The two verification hours for a month: a month-varying anchor and its
/// 12-hour complement.
pub fn eval_hours(year: i32, month: u32) -> Result<(u32, u32)> {
    if !(1..=12).contains(&month) {
        return Err(Error::Config(format!("month {month} outside 1..=12")));
    }
    let h1 = (year.rem_euclid(12) as u32 + month) % 12;
    Ok((h1, h1 + 12))
}

/// Render kept tiles as the manifest table:
/// `timestep,row0,col0,size,region,reason,seed`.
pub fn tile_manifest_csv(tiles: &[SampledTile], regions: &RegionMap, seed: u64) -> Result<String> {
    let mut out = String::from("timestep,row0,col0,size,region,reason,seed\n");
    for t in tiles {
        let region = regions.region_of_tile(&t.spec)?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            format_valid_time(&t.valid_time),
            t.spec.row0,
            t.spec.col0,
            t.spec.size,
            region,
            t.reason.as_str(),
            seed
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{hour_utc, GridGeometry};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geom(ny: usize, nx: usize) -> GridGeometry {
        GridGeometry::new(ny, nx, 35.0, -100.0, 1.0, 1.0).unwrap()
    }

    fn t0() -> DateTime<Utc> {
        hour_utc(2024, 3, 10, 15)
    }

    fn flat_ari(g: &GridGeometry, v: f32) -> GridField {
        GridField::filled(g.clone(), VarTag::Ari, t0(), v)
    }

    fn rain_fill(g: &GridGeometry, v: f32) -> GridField {
        GridField::filled(g.clone(), VarTag::Rain, t0(), v)
    }

    #[test]
    fn dry_tile_is_rejected_with_reason() {
        let g = geom(10, 10);
        let ari = flat_ari(&g, 25.0);
        let mut crit = SamplingCriteria::new(&ari);
        crit.tile_size_km = 10.0;
        let field = rain_fill(&g, 0.0);
        let (ok, reason) = tile_valid(&field, &TileSpec::new(0, 0, 10), &crit).unwrap();
        assert!(!ok);
        assert_eq!(reason, TileReason::Dry);
    }

    #[test]
    fn coverage_branch_accepts_thirty_percent_wet() {
        let g = geom(10, 10);
        let ari = flat_ari(&g, 25.0);
        let crit = SamplingCriteria::new(&ari);
        let mut field = rain_fill(&g, 0.0);
        for k in 0..30 {
            field.set(k / 10, k % 10, 1.0);
        }
        let (ok, reason) = tile_valid(&field, &TileSpec::new(0, 0, 10), &crit).unwrap();
        assert!(ok);
        assert_eq!(reason, TileReason::Coverage);
    }

    #[test]
    fn ari_branch_accepts_single_extreme_pixel() {
        let g = geom(10, 10);
        let ari = flat_ari(&g, 25.0);
        let crit = SamplingCriteria::new(&ari);
        let mut field = rain_fill(&g, 0.0);
        field.set(4, 7, 30.0);
        let (ok, reason) = tile_valid(&field, &TileSpec::new(0, 0, 10), &crit).unwrap();
        assert!(ok);
        assert_eq!(reason, TileReason::Ari);
    }

    #[test]
    fn coverage_denominator_skips_missing_pixels() {
        let g = geom(4, 4);
        let ari = flat_ari(&g, 25.0);
        let crit = SamplingCriteria::new(&ari);
        let mut field = rain_fill(&g, 0.0);
        for k in 0..12 {
            field.set(k / 4, k % 4, f32::NAN);
        }
        field.set(3, 0, 1.0);
        let (ok, reason) = tile_valid(&field, &TileSpec::new(0, 0, 4), &crit).unwrap();
        assert!(ok, "1 wet of 4 present pixels meets the 25% rule");
        assert_eq!(reason, TileReason::Coverage);
    }

    #[test]
    fn validity_matches_per_tile_oracle() {
        let g = geom(12, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut field = rain_fill(&g, 0.0);
        let mut ari = flat_ari(&g, 0.0);
        for i in 0..g.ny {
            for j in 0..g.nx {
                field.set(i, j, if rng.random_range(0.0..1.0f32) < 0.3 { rng.random_range(0.0..30.0) } else { 0.0 });
                ari.set(i, j, rng.random_range(5.0..25.0f32));
            }
        }
        field.set(2, 2, f32::NAN);
        let mut crit = SamplingCriteria::new(&ari);
        crit.tile_size_km = 5.0;
        let size = 5;
        for row0 in 0..=g.ny - size {
            for col0 in 0..=g.nx - size {
                let tile = TileSpec::new(row0, col0, size);
                let (got, _) = tile_valid(&field, &tile, &crit).unwrap();
                let mut wet = 0;
                let mut present = 0;
                let mut extreme = false;
                for i in row0..row0 + size {
                    for j in col0..col0 + size {
                        let v = field.get(i, j);
                        if v.is_nan() {
                            continue;
                        }
                        present += 1;
                        if v > 0.0 {
                            wet += 1;
                        }
                        if v > ari.get(i, j) {
                            extreme = true;
                        }
                    }
                }
                let want = (present > 0 && wet as f64 / present as f64 >= 0.25) || extreme;
                assert_eq!(got, want, "tile at ({row0}, {col0})");
            }
        }
    }

    #[test]
    fn all_dry_domain_returns_no_tiles() {
        let g = geom(20, 20);
        let ari = flat_ari(&g, 25.0);
        let mut crit = SamplingCriteria::new(&ari);
        crit.tile_size_km = 8.0;
        let field = rain_fill(&g, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_timestep(&field, &crit, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn single_placement_domain_keeps_exactly_one_tile() {
        let g = geom(8, 8);
        let ari = flat_ari(&g, 25.0);
        let mut crit = SamplingCriteria::new(&ari);
        crit.tile_size_km = 8.0;
        let field = rain_fill(&g, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let kept = sample_timestep(&field, &crit, &mut rng).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].spec, TileSpec::new(0, 0, 8));
        assert_eq!(kept[0].reason, TileReason::Coverage);
    }

    #[test]
    fn retained_tiles_honor_spacing_and_caps() {
        let g = geom(120, 120);
        let ari = flat_ari(&g, 25.0);
        let mut crit = SamplingCriteria::new(&ari);
        crit.tile_size_km = 10.0;
        let field = rain_fill(&g, 2.0);
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kept = sample_timestep(&field, &crit, &mut rng).unwrap();
            assert!(kept.len() <= crit.max_retained_per_timestep);
            assert!(!kept.is_empty());
            for a in 0..kept.len() {
                for b in a + 1..kept.len() {
                    let (ay, ax) = kept[a].spec.center_km(&g);
                    let (by, bx) = kept[b].spec.center_km(&g);
                    let d = ((ay - by).powi(2) + (ax - bx).powi(2)).sqrt();
                    assert!(d >= crit.min_spacing_km, "centers {d} km apart");
                }
            }
            let mut rng2 = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(kept, sample_timestep(&field, &crit, &mut rng2).unwrap());
        }
    }

    fn region_map_2x4(g: &GridGeometry) -> RegionMap {
        let mut f = GridField::filled(g.clone(), VarTag::Region, t0(), 0.0);
        for i in 0..g.ny {
            for j in 0..g.nx {
                let id = (i * 2 / g.ny) * 4 + (j * 4 / g.nx).min(3);
                f.set(i, j, id as f32);
            }
        }
        RegionMap::new(f, (1..=8).map(|k| format!("R{k}")).collect()).unwrap()
    }

    #[test]
    fn region_of_tile_uses_center_pixel() {
        let g = geom(16, 16);
        let map = region_map_2x4(&g);
        assert_eq!(map.region_of_tile(&TileSpec::new(0, 0, 4)).unwrap(), "R1");
        assert_eq!(map.region_of_tile(&TileSpec::new(0, 12, 4)).unwrap(), "R4");
        assert_eq!(map.region_of_tile(&TileSpec::new(6, 6, 4)).unwrap(), "R7");
        assert_eq!(map.region_of_tile(&TileSpec::new(12, 12, 4)).unwrap(), "R8");
    }

    #[test]
    fn region_map_rejects_bad_rasters() {
        let g = geom(4, 4);
        let mut f = GridField::filled(g.clone(), VarTag::Region, t0(), 0.0);
        f.set(0, 0, f32::NAN);
        assert!(RegionMap::new(f, vec!["a".into()]).is_err());
        let mut f = GridField::filled(g.clone(), VarTag::Region, t0(), 0.0);
        f.set(1, 1, 3.0);
        assert!(RegionMap::new(f, vec!["a".into(), "b".into()]).is_err());
        let f = GridField::filled(g.clone(), VarTag::Rain, t0(), 0.0);
        assert!(RegionMap::new(f, vec!["a".into()]).is_err());
    }

    fn pool_of(n: usize, g: &GridGeometry, month: u32) -> Vec<SampledTile> {
        (0..n)
            .map(|k| SampledTile {
                valid_time: hour_utc(2024, month, 1 + (k % 27) as u32, (k % 24) as u32),
                spec: TileSpec::new(k % (g.ny - 4), k % (g.nx - 4), 4),
                reason: TileReason::Coverage,
            })
            .collect()
    }

    #[test]
    fn small_groups_are_kept_whole_and_large_ones_capped() {
        let g = geom(16, 16);
        let map = region_map_2x4(&g);
        let pool = pool_of(80, &g, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(regional_balance(&pool, &map, 120, &mut rng).unwrap().len(), 80);

        let pool: Vec<SampledTile> = (0..300)
            .map(|k| SampledTile {
                valid_time: hour_utc(2024, 4, 1, 0) + chrono::Duration::hours(k),
                spec: TileSpec::new(0, 0, 4),
                reason: TileReason::Coverage,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kept = regional_balance(&pool, &map, 120, &mut rng).unwrap();
        let in_april: Vec<&SampledTile> =
            pool.iter().filter(|t| t.valid_time.month() == 4).collect();
        assert_eq!(in_april.len(), 300, "pool stays inside one calendar month");
        assert_eq!(kept.len(), 120, "one oversized group trims to the cap");
        let order: Vec<usize> =
            kept.iter().map(|t| pool.iter().position(|p| p == t).unwrap()).collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]), "output keeps pool order");

        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(kept, regional_balance(&pool, &map, 120, &mut rng2).unwrap());
    }

    #[test]
    fn months_are_separate_groups() {
        let g = geom(16, 16);
        let map = region_map_2x4(&g);
        let mut pool = pool_of(100, &g, 5);
        pool.extend(pool_of(100, &g, 6));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kept = regional_balance(&pool, &map, 120, &mut rng).unwrap();
        assert_eq!(kept.len(), 200, "both months under the cap keep everything");
    }

    #[test]
    fn eval_hours_follow_the_formula() {
        assert_eq!(eval_hours(2024, 3).unwrap(), (11, 23));
        let mut firsts = Vec::new();
        for month in 1..=12 {
            let (h1, h2) = eval_hours(2024, month).unwrap();
            assert_eq!(h2 - h1, 12);
            assert!(h1 < 24 && h2 < 24);
            firsts.push(h1);
        }
        firsts.sort_unstable();
        firsts.dedup();
        assert_eq!(firsts.len(), 12);
        assert!(eval_hours(2024, 0).is_err());
        assert!(eval_hours(-7, 5).is_ok());
    }

    #[test]
    fn manifest_csv_layout() {
        let g = geom(16, 16);
        let map = region_map_2x4(&g);
        let tiles = vec![SampledTile {
            valid_time: hour_utc(2024, 3, 10, 15),
            spec: TileSpec::new(6, 6, 4),
            reason: TileReason::Ari,
        }];
        let csv = tile_manifest_csv(&tiles, &map, 42).unwrap();
        assert_eq!(
            csv,
            "timestep,row0,col0,size,region,reason,seed\n2024-03-10T15:00:00Z,6,6,4,R7,ari,42\n"
        );
    }
}
