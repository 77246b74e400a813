use rand::seq::index::sample;
use rand::Rng;

use super::Frame;

pub const SPRITE: usize = 8;

const GLYPHS: [[u8; SPRITE]; 10] = [
    // ring
    [0x3c, 0x42, 0x81, 0x81, 0x81, 0x81, 0x42, 0x3c],
    // plus
    [0x18, 0x18, 0x18, 0xff, 0xff, 0x18, 0x18, 0x18],
    // cross
    [0x81, 0x42, 0x24, 0x18, 0x18, 0x24, 0x42, 0x81],
    // block
    [0x00, 0x7e, 0x7e, 0x7e, 0x7e, 0x7e, 0x7e, 0x00],
    // triangle
    [0x10, 0x18, 0x1c, 0x1e, 0x1f, 0x1e, 0x1c, 0x18],
    // L
    [0xc0, 0xc0, 0xc0, 0xc0, 0xc0, 0xc0, 0xff, 0xff],
    // T
    [0xff, 0xff, 0x18, 0x18, 0x18, 0x18, 0x18, 0x18],
    // diamond
    [0x18, 0x3c, 0x7e, 0xff, 0xff, 0x7e, 0x3c, 0x18],
    // checker
    [0xaa, 0x55, 0xaa, 0x55, 0xaa, 0x55, 0xaa, 0x55],
    // hook
    [0xfe, 0x02, 0x02, 0x02, 0x3e, 0x20, 0x20, 0x3e],
];

fn glyph_on(glyph: usize, x: usize, y: usize) -> bool {
    GLYPHS[glyph][y] & (0x80 >> x) != 0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpriteConfig {
    pub extent: usize,
    pub frames: usize,
    pub max_sprites: usize,
}

impl Default for SpriteConfig {
    fn default() -> Self {
        Self {
            extent: 32,
            frames: 11,
            max_sprites: 2,
        }
    }
}

/// Sprite position (top-left corner) and velocity at the first frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sprite {
    pub glyph: usize,
    pub x: i32,
    pub y: i32,
    pub vx: i32,
    pub vy: i32,
}

impl Sprite {
    /// Advances one frame, reflecting off `[0, limit]`.
    fn step(&mut self, limit: i32) {
        fn axis(p: &mut i32, v: &mut i32, limit: i32) {
            *p += *v;
            if *p < 0 {
                *p = -*p;
                *v = -*v;
            } else if *p > limit {
                *p = 2 * limit - *p;
                *v = -*v;
            }
        }
        axis(&mut self.x, &mut self.vx, limit);
        axis(&mut self.y, &mut self.vy, limit);
    }

    fn draw(&self, f: &mut Frame) {
        for y in 0..SPRITE {
            for x in 0..SPRITE {
                if glyph_on(self.glyph, x, y) {
                    f.set(self.x as usize + x, self.y as usize + y, 1.0);
                }
            }
        }
    }
}

/// A bouncing-sprite clip. `sprites` records the initial sprite states; it is
/// empty for videos read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingSpriteVideo {
    pub id: u64,
    pub frames: Vec<Frame>,
    pub sprites: Vec<Sprite>,
}

/// Positions of every sprite at each frame.
pub fn trajectories(sprites: &[Sprite], cfg: &SpriteConfig) -> Vec<Vec<Sprite>> {
    let limit = (cfg.extent - SPRITE) as i32;
    let mut cur = sprites.to_vec();
    let mut out = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        out.push(cur.clone());
        cur.iter_mut().for_each(|s| s.step(limit));
    }
    out
}

fn velocity(rng: &mut impl Rng) -> i32 {
    let v = rng.gen_range(1..=2);
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

pub fn gen_moving_sprites(id: u64, rng: &mut impl Rng, cfg: &SpriteConfig) -> MovingSpriteVideo {
    let limit = (cfg.extent - SPRITE) as i32;
    loop {
        let n = rng.gen_range(1..=cfg.max_sprites.clamp(1, GLYPHS.len()));
        let sprites: Vec<Sprite> = sample(rng, GLYPHS.len(), n)
            .into_iter()
            .map(|glyph| Sprite {
                glyph,
                x: rng.gen_range(0..=limit),
                y: rng.gen_range(0..=limit),
                vx: velocity(rng),
                vy: velocity(rng),
            })
            .collect();
        let frames: Vec<Frame> = trajectories(&sprites, cfg)
            .iter()
            .map(|state| {
                let mut f = Frame::blank(cfg.extent, cfg.extent);
                state.iter().for_each(|s| s.draw(&mut f));
                f
            })
            .collect();
        if frames.windows(2).all(|w| w[0] != w[1]) {
            return MovingSpriteVideo { id, frames, sprites };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn glyphs_are_distinct() {
        for (a, ga) in GLYPHS.iter().enumerate() {
            for gb in &GLYPHS[a + 1..] {
                assert_ne!(ga, gb);
            }
        }
    }

    #[test]
    fn reflection_by_hand() {
        let mut s = Sprite {
            glyph: 0,
            x: 1,
            y: 23,
            vx: -2,
            vy: 2,
        };
        s.step(24);
        assert_eq!((s.x, s.y, s.vx, s.vy), (1, 23, 2, -2));
        s.step(24);
        assert_eq!((s.x, s.y), (3, 21));
    }

    #[test]
    fn same_seed_same_video() {
        let cfg = SpriteConfig::default();
        let a = gen_moving_sprites(0, &mut SeededRng::new(4), &cfg);
        let b = gen_moving_sprites(0, &mut SeededRng::new(4), &cfg);
        assert_eq!(a, b);
        assert_eq!(a.frames.len(), 11);
    }
}
