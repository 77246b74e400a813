use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Element of the symmetry group of the square: `rot` clockwise quarter turns
/// applied after an optional horizontal mirror.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Dihedral {
    rot: u8,
    mirror: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { rot: 0, mirror: false };

    pub fn new(rot: u8, mirror: bool) -> Self {
        Self { rot: rot % 4, mirror }
    }

    /// All eight elements; the identity comes first.
    pub fn all() -> [Dihedral; 8] {
        let mut out = [Dihedral::IDENTITY; 8];
        for (i, g) in out.iter_mut().enumerate() {
            *g = Dihedral::from_index(i);
        }
        out
    }

    pub fn from_index(i: usize) -> Self {
        Self::new((i % 4) as u8, i >= 4)
    }

    pub fn index(self) -> usize {
        self.rot as usize + if self.mirror { 4 } else { 0 }
    }

    pub fn rot(self) -> u8 {
        self.rot
    }

    pub fn mirror(self) -> bool {
        self.mirror
    }

    /// Maps pixel `(x, y)` of an `extent`×`extent` grid.
    pub fn apply(self, x: i32, y: i32, extent: i32) -> (i32, i32) {
        let (mut x, mut y) = if self.mirror { (extent - 1 - x, y) } else { (x, y) };
        for _ in 0..self.rot {
            (x, y) = (extent - 1 - y, x);
        }
        (x, y)
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(self, first: Dihedral) -> Dihedral {
        // M·R^r = R^(-r)·M
        let r = if self.mirror {
            self.rot + 4 - first.rot
        } else {
            self.rot + first.rot
        };
        Dihedral::new(r, self.mirror ^ first.mirror)
    }

    pub fn inverse(self) -> Dihedral {
        Dihedral::all()
            .into_iter()
            .find(|g| g.after(self) == Dihedral::IDENTITY)
            .expect("group elements have inverses")
    }
}

impl fmt::Display for Dihedral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}m{}", self.rot, u8::from(self.mirror))
    }
}

impl FromStr for Dihedral {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Descriptor {
            text: s.to_string(),
            msg: "expected r<0-3>m<0|1>".into(),
        };
        let b = s.as_bytes();
        if b.len() != 4 || b[0] != b'r' || b[2] != b'm' {
            return Err(bad());
        }
        let rot = match b[1] {
            c @ b'0'..=b'3' => c - b'0',
            _ => return Err(bad()),
        };
        let mirror = match b[3] {
            b'0' => false,
            b'1' => true,
            _ => return Err(bad()),
        };
        Ok(Dihedral::new(rot, mirror))
    }
}
