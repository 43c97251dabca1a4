//! Voxel design states and the state <-> embedding codec.
//!
//! A design state is a dense grid of room types over a fixed, per-episode
//! partition of space. States flatten into unit-interval vectors (one entry
//! per voxel, `code / 7`) so sequence models can consume them directly, and
//! the decoder quantizes such vectors back onto the eight code levels.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Number of distinct room codes, including `Empty`.
pub const ROOM_CODE_COUNT: usize = 8;

/// Highest room code; embeddings normalize by this.
pub const MAX_ROOM_CODE: u8 = 7;

/// Room type of a single voxel. `Empty` marks a non-existent room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoomType {
    Empty,
    Elevator,
    Stairs,
    Mechanical,
    Restroom,
    Corridor,
    Office,
    Lobby,
}

impl RoomType {
    /// All non-empty room types, in code order.
    pub const NON_EMPTY: [RoomType; 7] = [
        RoomType::Elevator,
        RoomType::Stairs,
        RoomType::Mechanical,
        RoomType::Restroom,
        RoomType::Corridor,
        RoomType::Office,
        RoomType::Lobby,
    ];

    /// Stable numeric code: `Empty` is 0, the rest are 1..=7.
    pub const fn code(self) -> u8 {
        match self {
            RoomType::Empty => 0,
            RoomType::Elevator => 1,
            RoomType::Stairs => 2,
            RoomType::Mechanical => 3,
            RoomType::Restroom => 4,
            RoomType::Corridor => 5,
            RoomType::Office => 6,
            RoomType::Lobby => 7,
        }
    }

    pub fn from_code(code: u8) -> Option<RoomType> {
        match code {
            0 => Some(RoomType::Empty),
            1 => Some(RoomType::Elevator),
            2 => Some(RoomType::Stairs),
            3 => Some(RoomType::Mechanical),
            4 => Some(RoomType::Restroom),
            5 => Some(RoomType::Corridor),
            6 => Some(RoomType::Office),
            7 => Some(RoomType::Lobby),
            _ => None,
        }
    }

    pub fn is_occupied(self) -> bool {
        self != RoomType::Empty
    }

    pub fn name(self) -> &'static str {
        match self {
            RoomType::Empty => "empty",
            RoomType::Elevator => "elevator",
            RoomType::Stairs => "stairs",
            RoomType::Mechanical => "mechanical",
            RoomType::Restroom => "restroom",
            RoomType::Corridor => "corridor",
            RoomType::Office => "office",
            RoomType::Lobby => "lobby",
        }
    }
}

/// Per-axis voxel sizes in meters. Fixed for the lifetime of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPartition {
    pub x_sizes: Vec<f64>,
    pub y_sizes: Vec<f64>,
    pub z_sizes: Vec<f64>,
}

impl GridPartition {
    pub fn new(x_sizes: Vec<f64>, y_sizes: Vec<f64>, z_sizes: Vec<f64>) -> Result<Self> {
        for (axis, sizes) in [("x", &x_sizes), ("y", &y_sizes), ("z", &z_sizes)] {
            if sizes.is_empty() {
                return Err(CoreError::Constraint(format!("{axis}_sizes is empty")));
            }
            if sizes.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
                return Err(CoreError::Constraint(format!(
                    "{axis}_sizes must be strictly positive"
                )));
            }
        }
        Ok(Self {
            x_sizes,
            y_sizes,
            z_sizes,
        })
    }

    /// Uniform partition; handy for tests and as a default for wire payloads.
    pub fn uniform(nx: usize, ny: usize, nz: usize, cell: f64, height: f64) -> Self {
        Self {
            x_sizes: vec![cell; nx],
            y_sizes: vec![cell; ny],
            z_sizes: vec![height; nz],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.x_sizes.len(), self.y_sizes.len(), self.z_sizes.len())
    }

    pub fn volume(&self) -> usize {
        self.x_sizes.len() * self.y_sizes.len() * self.z_sizes.len()
    }

    /// Footprint area of column (x, y) in square meters.
    pub fn cell_area(&self, x: usize, y: usize) -> f64 {
        self.x_sizes[x] * self.y_sizes[y]
    }

    /// Total parcel area: (sum of x sizes) * (sum of y sizes).
    pub fn parcel_area(&self) -> f64 {
        let sx: f64 = self.x_sizes.iter().sum();
        let sy: f64 = self.y_sizes.iter().sum();
        sx * sy
    }
}

/// One voxel snapshot: a room type per voxel plus the episode partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignState {
    rooms: Vec<RoomType>,
    partition: GridPartition,
}

impl DesignState {
    /// All-empty state over the given partition.
    pub fn empty(partition: GridPartition) -> Self {
        let volume = partition.volume();
        Self {
            rooms: vec![RoomType::Empty; volume],
            partition,
        }
    }

    pub fn partition(&self) -> &GridPartition {
        &self.partition
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.partition.dims()
    }

    /// Row-major flat index of voxel (x, y, z): x slowest, z fastest.
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        let (_, ny, nz) = self.dims();
        (x * ny + y) * nz + z
    }

    pub fn in_bounds(&self, x: usize, y: usize, z: usize) -> bool {
        let (nx, ny, nz) = self.dims();
        x < nx && y < ny && z < nz
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> RoomType {
        self.rooms[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, room: RoomType) {
        let idx = self.index(x, y, z);
        self.rooms[idx] = room;
    }

    /// Rooms in row-major order.
    pub fn rooms(&self) -> &[RoomType] {
        &self.rooms
    }

    pub fn occupied_count(&self) -> usize {
        self.rooms.iter().filter(|r| r.is_occupied()).count()
    }

    /// Occupied (x, y, z) coordinates in row-major order.
    pub fn occupied_voxels(&self) -> Vec<(usize, usize, usize)> {
        let (_, ny, nz) = self.dims();
        self.rooms
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_occupied())
            .map(|(idx, _)| {
                let z = idx % nz;
                let y = (idx / nz) % ny;
                let x = idx / (nz * ny);
                (x, y, z)
            })
            .collect()
    }

    /// Build a state from row-major room codes.
    pub fn from_codes(partition: GridPartition, codes: &[u8]) -> Result<Self> {
        if codes.len() != partition.volume() {
            return Err(CoreError::Dimension {
                expected: partition.volume(),
                actual: codes.len(),
            });
        }
        let rooms = codes
            .iter()
            .map(|&c| {
                RoomType::from_code(c)
                    .ok_or_else(|| CoreError::Format(format!("invalid room code {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rooms, partition })
    }

    /// Row-major room codes.
    pub fn codes(&self) -> Vec<u8> {
        self.rooms.iter().map(|r| r.code()).collect()
    }
}

/// Flattened unit-interval view of a design state, one entry per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignEmbedding {
    values: Vec<f64>,
}

impl DesignEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(CoreError::Constraint(
                "embedding values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { values })
    }

    /// Wrap raw model output; values are clamped into [0, 1].
    pub fn from_raw(values: Vec<f64>) -> Self {
        Self {
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Flatten a state into its embedding: voxel (x, y, z) in row-major order
/// maps to `code / 7`.
pub fn encode_state(state: &DesignState) -> DesignEmbedding {
    let values = state
        .rooms()
        .iter()
        .map(|r| f64::from(r.code()) / f64::from(MAX_ROOM_CODE))
        .collect();
    DesignEmbedding { values }
}

/// Quantize a unit-interval value to the nearest room code; exact midpoints
/// round toward the lower code.
pub fn quantize_code(value: f64) -> u8 {
    let scaled = (value * f64::from(MAX_ROOM_CODE)).clamp(0.0, f64::from(MAX_ROOM_CODE));
    let base = scaled.floor();
    let frac = scaled - base;
    let code = if frac > 0.5 { base + 1.0 } else { base };
    code as u8
}

/// Inverse of [`encode_state`]: quantize every entry and rebuild the state
/// over the given partition.
pub fn decode_embedding(embedding: &DesignEmbedding, partition: &GridPartition) -> Result<DesignState> {
    if embedding.len() != partition.volume() {
        return Err(CoreError::Dimension {
            expected: partition.volume(),
            actual: embedding.len(),
        });
    }
    let rooms = embedding
        .values()
        .iter()
        .map(|&v| RoomType::from_code(quantize_code(v)).expect("quantized code is in range"))
        .collect();
    Ok(DesignState {
        rooms,
        partition: partition.clone(),
    })
}

/// Fraction of voxels whose room type matches; symmetric in its arguments.
pub fn state_diff(a: &DesignState, b: &DesignState) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(CoreError::Dimension {
            expected: a.rooms().len(),
            actual: b.rooms().len(),
        });
    }
    let total = a.rooms().len();
    let matching = a
        .rooms()
        .iter()
        .zip(b.rooms().iter())
        .filter(|(ra, rb)| ra == rb)
        .count();
    Ok(matching as f64 / total as f64)
}
