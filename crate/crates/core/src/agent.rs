//! Expert design policy.
//!
//! The agent lays out a building core (elevators with service rooms and
//! connecting corridors, duplicated on every floor), grows a lobby on the
//! first floor, grows offices on the second floor, and duplicates the office
//! layout upward. Constraint sampling is feasibility-aware: the floor-area
//! and office-share targets recorded for an episode are ones the plan
//! actually attains, so replaying the expert trace terminates exactly on its
//! final action.
//!
//! The module also provides the corrupted "horizon" policies: follow the
//! expert for a fixed number of steps, then place uniformly random rooms
//! until the expert trace length is reached.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::gym::{draw_partition, Action, EpisodeConstraints, MAX_EPISODE_STEPS};
use crate::seeds;
use crate::voxel::{GridPartition, RoomType};

/// Square meters of planned building area served by one elevator.
pub const ELEVATOR_AREA_QUOTA: f64 = 2000.0;

/// Smallest lobby the plan will schedule, in square meters.
pub const MIN_LOBBY_AREA: f64 = 25.0;

/// Slack when painting toward an area target, absorbing summation rounding.
const AREA_EPS: f64 = 1e-6;

/// Resolved plan for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPlan {
    /// Elevator voxels on the first floor; the site multiset is invariant
    /// under 180-degree rotation about the footprint's center cell.
    pub elevator_sites: Vec<(usize, usize, usize)>,
    /// Per-floor core template (elevators, service rooms, corridors) in
    /// placement order; applied identically to every floor.
    pub service_layout: Vec<((usize, usize), RoomType)>,
    pub floors_used: usize,
    /// Lobby footprint cells on the first floor, in placement order.
    pub lobby_cells: Vec<(usize, usize)>,
    /// Office footprint cells per office floor, in placement order.
    pub office_cells: Vec<(usize, usize)>,
}

/// Knobs for episode sampling.
#[derive(Debug, Clone)]
pub struct SampleConfig {
    pub dims: (usize, usize, usize),
    pub far_range: (f64, f64),
    pub office_range: (f64, f64),
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            dims: (10, 10, 10),
            far_range: (1.0, 5.0),
            office_range: (0.6, 0.85),
        }
    }
}

/// Number of elevators: one per [`ELEVATOR_AREA_QUOTA`] of planned building
/// area, clamped to 1..=4.
pub fn elevator_count(far_target: f64, parcel_area: f64) -> usize {
    let raw = (far_target * parcel_area / ELEVATOR_AREA_QUOTA).round() as i64;
    raw.clamp(1, 4) as usize
}

/// Rotate a footprint cell 180 degrees about the center cell.
pub fn rotate_cell(nx: usize, ny: usize, x: usize, y: usize) -> Option<(usize, usize)> {
    let rx = 2 * (nx / 2) as i64 - x as i64;
    let ry = 2 * (ny / 2) as i64 - y as i64;
    if rx >= 0 && ry >= 0 && (rx as usize) < nx && (ry as usize) < ny {
        Some((rx as usize, ry as usize))
    } else {
        None
    }
}

fn elevator_sites(nx: usize, ny: usize, count: usize) -> Result<Vec<(usize, usize)>> {
    let cx = nx / 2;
    let cy = ny / 2;
    let qx = nx / 4;
    let qy = ny / 4;
    let sites = match count {
        1 => vec![(cx, cy)],
        2 => vec![(cx - qx, cy - qy), (cx + qx, cy + qy)],
        3 => vec![(cx, cy), (cx - qx, cy - qy), (cx + qx, cy + qy)],
        4 => vec![
            (cx - qx, cy - qy),
            (cx - qx, cy + qy),
            (cx + qx, cy - qy),
            (cx + qx, cy + qy),
        ],
        n => {
            return Err(CoreError::Planning(format!(
                "unsupported elevator count {n}"
            )))
        }
    };
    for i in 0..sites.len() {
        for j in (i + 1)..sites.len() {
            if sites[i] == sites[j] {
                return Err(CoreError::Planning(
                    "footprint too small for distinct elevator sites".into(),
                ));
            }
        }
    }
    Ok(sites)
}

/// Axis-aligned L-path between two cells: x leg first, then y leg. The
/// endpoints themselves are excluded.
fn l_path(from: (usize, usize), to: (usize, usize)) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    let (mut x, y0) = (from.0 as i64, from.1 as i64);
    let (x1, y1) = (to.0 as i64, to.1 as i64);
    let dx = (x1 - x).signum();
    while x != x1 {
        x += dx;
        cells.push((x as usize, y0 as usize));
    }
    let mut y = y0;
    let dy = (y1 - y).signum();
    while y != y1 {
        y += dy;
        cells.push((x1 as usize, y as usize));
    }
    // Drop the destination cell: that's the next elevator.
    cells.pop();
    cells
}

struct CoreGeometry {
    sites: Vec<(usize, usize)>,
    cells: Vec<((usize, usize), RoomType)>,
    area: f64,
}

fn core_geometry(grid: &GridPartition, count: usize) -> Result<CoreGeometry> {
    let (nx, ny, _) = grid.dims();
    let sites = elevator_sites(nx, ny, count)?;

    let mut cells: Vec<((usize, usize), RoomType)> = Vec::new();
    let mut taken = vec![false; nx * ny];
    let mut claim = |cell: (usize, usize), room: RoomType, cells: &mut Vec<_>| -> Result<()> {
        if cell.0 >= nx || cell.1 >= ny {
            return Err(CoreError::Planning(
                "core room falls outside the footprint".into(),
            ));
        }
        let idx = cell.1 * nx + cell.0;
        if taken[idx] {
            return Err(CoreError::Planning(
                "footprint too small: core rooms collide".into(),
            ));
        }
        taken[idx] = true;
        cells.push((cell, room));
        Ok(())
    };

    for &site in &sites {
        claim(site, RoomType::Elevator, &mut cells)?;
    }
    // Service rooms hug each elevator.
    for &(x, y) in &sites {
        if x + 1 >= nx || x == 0 || y + 1 >= ny {
            return Err(CoreError::Planning(
                "no room for service cluster around elevator".into(),
            ));
        }
        claim((x + 1, y), RoomType::Stairs, &mut cells)?;
        claim((x - 1, y), RoomType::Mechanical, &mut cells)?;
        claim((x, y + 1), RoomType::Restroom, &mut cells)?;
    }
    // Corridors chain consecutive elevators; cells already used by the core
    // keep their type and still carry connectivity.
    for pair in sites.windows(2) {
        for cell in l_path(pair[0], pair[1]) {
            let idx = cell.1 * nx + cell.0;
            if !taken[idx] {
                taken[idx] = true;
                cells.push((cell, RoomType::Corridor));
            }
        }
    }

    let area = cells.iter().map(|&((x, y), _)| grid.cell_area(x, y)).sum();
    Ok(CoreGeometry { sites, cells, area })
}

/// Feasible office-share interval per floor count.
fn share_intervals(
    grid: &GridPartition,
    core_area: f64,
    far_target: f64,
) -> Vec<(usize, f64, f64)> {
    let parcel = grid.parcel_area();
    let (_, _, nz) = grid.dims();
    let total_area = far_target * parcel;
    let free = parcel - core_area;
    let mut intervals = Vec::new();
    if free <= 0.0 {
        return intervals;
    }
    for floors in 2..=nz {
        let fc = floors as f64 * core_area;
        let hi_capacity = (floors as f64 - 1.0) * free / total_area;
        let hi_lobby = 1.0 - (fc + MIN_LOBBY_AREA) / total_area;
        let lo_lobby = 1.0 - (fc + free) / total_area;
        let lo = lo_lobby.max(0.05);
        let hi = hi_capacity.min(hi_lobby).min(0.95);
        if lo <= hi {
            intervals.push((floors, lo, hi));
        }
    }
    intervals
}

fn choose_floors(intervals: &[(usize, f64, f64)], office_share: f64) -> Option<usize> {
    intervals
        .iter()
        .find(|&&(_, lo, hi)| office_share >= lo && office_share <= hi)
        .map(|&(floors, _, _)| floors)
}

/// Scanline growth: walk the footprint row by row, painting free cells until
/// the area target is met.
fn paint_until(
    grid: &GridPartition,
    blocked: &[bool],
    target_area: f64,
) -> Result<Vec<(usize, usize)>> {
    let (nx, ny, _) = grid.dims();
    let mut cells = Vec::new();
    let mut area = 0.0;
    'rows: for y in 0..ny {
        for x in 0..nx {
            if area >= target_area - AREA_EPS {
                break 'rows;
            }
            if blocked[y * nx + x] {
                continue;
            }
            cells.push((x, y));
            area += grid.cell_area(x, y);
        }
    }
    if area >= target_area - AREA_EPS {
        Ok(cells)
    } else {
        Err(CoreError::Planning(format!(
            "growth target {target_area:.1} m^2 exceeds free floor area {area:.1} m^2"
        )))
    }
}

fn build_plan(grid: &GridPartition, far_target: f64, office_share: f64) -> Result<AgentPlan> {
    let (nx, ny, _) = grid.dims();
    let parcel = grid.parcel_area();
    let count = elevator_count(far_target, parcel);
    let core = core_geometry(grid, count)?;
    let intervals = share_intervals(grid, core.area, far_target);
    let floors = choose_floors(&intervals, office_share).ok_or_else(|| {
        CoreError::Planning(format!(
            "office share {office_share:.3} infeasible at FAR {far_target:.3}"
        ))
    })?;

    let total_area = far_target * parcel;
    let lobby_target = (1.0 - office_share) * total_area - floors as f64 * core.area;
    let office_target = office_share * total_area / (floors as f64 - 1.0);

    let mut blocked = vec![false; nx * ny];
    for &((x, y), _) in &core.cells {
        blocked[y * nx + x] = true;
    }
    let lobby_cells = paint_until(grid, &blocked, lobby_target)?;
    let office_cells = paint_until(grid, &blocked, office_target)?;

    let plan = AgentPlan {
        elevator_sites: core.sites.iter().map(|&(x, y)| (x, y, 0)).collect(),
        service_layout: core.cells,
        floors_used: floors,
        lobby_cells,
        office_cells,
    };
    if plan.action_count() > MAX_EPISODE_STEPS {
        return Err(CoreError::Planning(format!(
            "plan needs {} actions, over the {MAX_EPISODE_STEPS}-step cap",
            plan.action_count()
        )));
    }
    Ok(plan)
}

impl AgentPlan {
    pub fn action_count(&self) -> usize {
        self.floors_used * self.service_layout.len()
            + self.lobby_cells.len()
            + (self.floors_used - 1) * self.office_cells.len()
    }

    /// Emit the action trace: core floor by floor, lobby on the first floor,
    /// offices on the second, then the office layout duplicated upward.
    pub fn actions(&self) -> Vec<Action> {
        let mut actions = Vec::with_capacity(self.action_count());
        for floor in 0..self.floors_used {
            for &((x, y), room) in &self.service_layout {
                actions.push(Action { x, y, z: floor, room });
            }
        }
        for &(x, y) in &self.lobby_cells {
            actions.push(Action {
                x,
                y,
                z: 0,
                room: RoomType::Lobby,
            });
        }
        for floor in 1..self.floors_used {
            for &(x, y) in &self.office_cells {
                actions.push(Action {
                    x,
                    y,
                    z: floor,
                    room: RoomType::Office,
                });
            }
        }
        actions
    }
}

/// FAR target placed midway between the second-to-last and final cumulative
/// areas, so the episode finishes exactly on the last planned action.
fn mid_far_target(grid: &GridPartition, actions: &[Action]) -> f64 {
    let total: f64 = actions.iter().map(|a| grid.cell_area(a.x, a.y)).sum();
    let last = actions
        .last()
        .map(|a| grid.cell_area(a.x, a.y))
        .unwrap_or(0.0);
    (total - last / 2.0) / grid.parcel_area()
}

/// Resolve the plan for a recorded episode.
pub fn plan_core(constraints: &EpisodeConstraints, grid: &GridPartition) -> Result<AgentPlan> {
    constraints.validate()?;
    let office_share = constraints
        .tpr_targets
        .get(&RoomType::Office)
        .copied()
        .unwrap_or(0.0);
    build_plan(grid, constraints.far_target, office_share)
}

/// Expert action trace for an episode.
pub fn expert_actions(constraints: &EpisodeConstraints, grid: &GridPartition) -> Result<Vec<Action>> {
    Ok(plan_core(constraints, grid)?.actions())
}

/// Follow the expert for `horizon` steps, then place uniformly random rooms
/// (location and non-empty type) until the expert trace length is reached.
pub fn horizon_policy_actions(
    constraints: &EpisodeConstraints,
    grid: &GridPartition,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Action>> {
    let expert = expert_actions(constraints, grid)?;
    let target_len = expert.len();
    let prefix = horizon.min(target_len);
    let mut actions: Vec<Action> = expert[..prefix].to_vec();
    let (nx, ny, nz) = grid.dims();
    let mut rng = seeds::rng(seed);
    while actions.len() < target_len {
        let room = RoomType::from_code(rng.random_range(1..=7)).expect("code in range");
        actions.push(Action {
            x: rng.random_range(0..nx),
            y: rng.random_range(0..ny),
            z: rng.random_range(0..nz),
            room,
        });
    }
    Ok(actions)
}

/// Sample one design problem together with its partition.
///
/// The FAR and office-share draws are snapped onto targets the plan attains:
/// the office share is drawn inside the feasible window closest to the
/// configured range, and the recorded FAR sits midway between the plan's
/// last two cumulative areas, so replay terminates on the final action.
pub fn sample_episode(seed: u64, cfg: &SampleConfig) -> Result<(EpisodeConstraints, GridPartition)> {
    let mut rng = seeds::rng(seed);
    let grid = draw_partition(&mut rng, cfg.dims);
    let parcel = grid.parcel_area();
    let far_draw = rng.random_range(cfg.far_range.0..cfg.far_range.1);
    let share_draw: f64 = rng.random();

    let mut far_base = far_draw;
    for _attempt in 0..32 {
        let count = elevator_count(far_base, parcel);
        let Ok(core) = core_geometry(&grid, count) else {
            return Err(CoreError::Planning("grid cannot host a core".into()));
        };
        let intervals = share_intervals(&grid, core.area, far_base);
        if intervals.is_empty() {
            far_base *= 0.985;
            continue;
        }
        // Prefer the smallest floor count whose feasible window overlaps the
        // configured office range; otherwise take the nearest endpoint.
        let window = intervals
            .iter()
            .filter_map(|&(_, lo, hi)| {
                let lo_w = lo.max(cfg.office_range.0);
                let hi_w = hi.min(cfg.office_range.1);
                (lo_w <= hi_w).then_some((lo_w, hi_w))
            })
            .next();
        let (w_lo, w_hi) = window.unwrap_or_else(|| {
            let mut best = (f64::INFINITY, 0.0);
            for &(_, lo, hi) in &intervals {
                for edge in [lo, hi] {
                    let dist = if edge < cfg.office_range.0 {
                        cfg.office_range.0 - edge
                    } else if edge > cfg.office_range.1 {
                        edge - cfg.office_range.1
                    } else {
                        0.0
                    };
                    if dist < best.0 {
                        best = (dist, edge);
                    }
                }
            }
            (best.1, best.1)
        });
        let office_share = w_lo + share_draw * (w_hi - w_lo);

        // Iterate the FAR target to a fixed point of the plan it induces.
        let mut far = far_base;
        let mut converged = None;
        for _ in 0..8 {
            let Ok(plan) = build_plan(&grid, far, office_share) else {
                break;
            };
            let far_next = mid_far_target(&grid, &plan.actions());
            match build_plan(&grid, far_next, office_share) {
                Ok(plan_next) if plan_next == plan => {
                    converged = Some((far_next, plan));
                    break;
                }
                Ok(_) => far = far_next,
                Err(_) => break,
            }
        }
        let Some((far_target, plan)) = converged else {
            far_base *= 0.985;
            continue;
        };

        // Program ratios: the drawn office share, with the remainder spread
        // over the other types in proportion to their planned areas.
        let mut areas: BTreeMap<RoomType, f64> = BTreeMap::new();
        for action in plan.actions() {
            *areas.entry(action.room).or_insert(0.0) += grid.cell_area(action.x, action.y);
        }
        let non_office: f64 = areas
            .iter()
            .filter(|(room, _)| **room != RoomType::Office)
            .map(|(_, a)| a)
            .sum();
        let mut tpr_targets = BTreeMap::new();
        for room in RoomType::NON_EMPTY {
            let share = if room == RoomType::Office {
                office_share
            } else {
                let area = areas.get(&room).copied().unwrap_or(0.0);
                (1.0 - office_share) * area / non_office
            };
            tpr_targets.insert(room, share);
        }

        let constraints = EpisodeConstraints {
            far_target,
            tpr_targets,
            seed,
        };
        constraints.validate()?;
        return Ok((constraints, grid));
    }
    Err(CoreError::Planning(format!(
        "no stable plan for seed {seed} near FAR {far_draw:.2}"
    )))
}
