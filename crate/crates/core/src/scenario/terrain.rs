use super::ScenarioKind;

/// Which side of the wadi a cell lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bank {
    West,
    East,
}

/// Static map features. TigerClaw carries a vertical impassable band (the
/// wadi) with exactly two 3-cell gaps; NTC is open ground.
#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    size: usize,
    blocked: Vec<bool>,
    wadi: Option<Wadi>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wadi {
    /// First column of the band.
    pub start: usize,
    /// One past the last column of the band.
    pub end: usize,
    /// Center row of each crossing gap.
    pub gaps: [usize; 2],
}

impl Wadi {
    pub fn in_gap_row(&self, y: usize) -> bool {
        self.gaps.iter().any(|&g| y + 1 >= g && y <= g + 1)
    }

    pub fn bank(&self, x: usize) -> Option<Bank> {
        if x < self.start {
            Some(Bank::West)
        } else if x >= self.end {
            Some(Bank::East)
        } else {
            None
        }
    }

    pub fn mid(&self) -> usize {
        (self.start + self.end - 1) / 2
    }
}

const DIRS: [(i64, i64); 8] = [
    (0, -1),  // N
    (1, -1),  // NE
    (1, 0),   // E
    (1, 1),   // SE
    (0, 1),   // S
    (-1, 1),  // SW
    (-1, 0),  // W
    (-1, -1), // NW
];

impl Terrain {
    pub fn new(kind: ScenarioKind, size: usize) -> Self {
        let mut blocked = vec![false; size * size];
        let wadi = match kind {
            ScenarioKind::Ntc => None,
            ScenarioKind::Tigerclaw => {
                let start = size / 2 - 1;
                let w = Wadi {
                    start,
                    end: start + 3,
                    gaps: [size / 4, 3 * size / 4],
                };
                for y in 0..size {
                    if w.in_gap_row(y) {
                        continue;
                    }
                    for x in w.start..w.end {
                        blocked[y * size + x] = true;
                    }
                }
                Some(w)
            }
        };
        Self {
            size,
            blocked,
            wadi,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn wadi(&self) -> Option<&Wadi> {
        self.wadi.as_ref()
    }

    pub fn is_blocked(&self, x: usize, y: usize) -> bool {
        self.blocked[y * self.size + x]
    }

    /// Terrain plane value: 1.0 for impassable wadi, 0.5 for the crossing
    /// gaps inside the band, 0 elsewhere.
    pub fn plane_value(&self, x: usize, y: usize) -> f64 {
        match &self.wadi {
            Some(w) if w.bank(x).is_none() => {
                if self.is_blocked(x, y) {
                    1.0
                } else {
                    0.5
                }
            }
            _ => 0.0,
        }
    }

    fn passable(&self, x: i64, y: i64) -> bool {
        let s = self.size as i64;
        x >= 0 && y >= 0 && x < s && y < s && !self.blocked[(y * s + x) as usize]
    }

    /// Replaces an impassable target with the nearest passable cell on the
    /// mover's bank of the wadi (same row).
    pub fn resolve_target(&self, from: (usize, usize), target: (usize, usize)) -> (usize, usize) {
        if !self.is_blocked(target.0, target.1) {
            return target;
        }
        let w = self.wadi.as_ref().expect("blocked cells only exist inside the wadi");
        match w.bank(from.0) {
            Some(Bank::West) => (w.start - 1, target.1),
            _ => (w.end, target.1),
        }
    }

    /// Intermediate target for a mover: the nearest gap when the target lies
    /// across the wadi, otherwise the target itself.
    fn waypoint(&self, pos: (usize, usize), target: (usize, usize)) -> (usize, usize) {
        let Some(w) = &self.wadi else { return target };
        match (w.bank(pos.0), w.bank(target.0)) {
            (Some(a), Some(b)) if a != b => {
                let gap = if pos.1.abs_diff(w.gaps[0]) <= pos.1.abs_diff(w.gaps[1]) {
                    w.gaps[0]
                } else {
                    w.gaps[1]
                };
                (w.mid(), gap)
            }
            _ => target,
        }
    }

    /// One greedy Chebyshev step toward `target`. A blocked step is replaced
    /// by the neighbouring directions in the order +45 (clockwise), -45, +90,
    /// -90 degrees; if all are blocked the unit stays put.
    pub fn step_toward(&self, pos: (usize, usize), target: (usize, usize)) -> (usize, usize) {
        if pos == target {
            return pos;
        }
        let wp = self.waypoint(pos, target);
        let dx = (wp.0 as i64 - pos.0 as i64).signum();
        let dy = (wp.1 as i64 - pos.1 as i64).signum();
        if dx == 0 && dy == 0 {
            return pos;
        }
        let d = DIRS.iter().position(|&v| v == (dx, dy)).unwrap() as i64;
        for off in [0i64, 1, -1, 2, -2] {
            let (ddx, ddy) = DIRS[(d + off).rem_euclid(8) as usize];
            let (nx, ny) = (pos.0 as i64 + ddx, pos.1 as i64 + ddy);
            if self.passable(nx, ny) {
                return (nx as usize, ny as usize);
            }
        }
        pos
    }

    /// Up to `speed` greedy steps toward `target`.
    pub fn advance(&self, mut pos: (usize, usize), target: (usize, usize), speed: u32) -> (usize, usize) {
        let target = self.resolve_target(pos, target);
        for _ in 0..speed {
            let next = self.step_toward(pos, target);
            if next == pos {
                break;
            }
            pos = next;
        }
        pos
    }
}

pub fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}
