//! Binary rasterization of programs and the 16-wide quadrant labels.

use super::program::{ComponentState, Shape, TransformProgram};
use super::{Dihedral, Frame, EXTENT};

const SLOT: i32 = 10;

/// Stroke categories counted by the labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    /// Horizontal or vertical strokes.
    Straight = 0,
    Slanted = 1,
    Curved = 2,
    Filled = 3,
}

/// Per-quadrant category counts, indexed `quadrant * 4 + category` with
/// quadrants ordered top-left, top-right, bottom-left, bottom-right.
pub type Labels = [u8; 16];

/// One countable element of a diagram with the pixels it covers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Primitive {
    pub category: Category,
    pub pixels: Vec<(i32, i32)>,
}

fn line(x0: i32, y0: i32, x1: i32, y1: i32) -> Vec<(i32, i32)> {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let mut out = Vec::new();
    loop {
        out.push((x, y));
        if x == x1 && y == y1 {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn prim(category: Category, pixels: Vec<(i32, i32)>) -> Primitive {
    Primitive { category, pixels }
}

/// Pixels strictly inside a closed outline, scanning each row between the
/// outline's extreme columns.
fn interior(outline: &[(i32, i32)]) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for y in 0..SLOT {
        let xs: Vec<i32> = outline.iter().filter(|p| p.1 == y).map(|p| p.0).collect();
        let (Some(&lo), Some(&hi)) = (xs.iter().min(), xs.iter().max()) else {
            continue;
        };
        let top = outline.iter().any(|p| p.1 < y);
        let bottom = outline.iter().any(|p| p.1 > y);
        if !(top && bottom) {
            continue;
        }
        out.extend((lo + 1..hi).filter(|&x| !xs.contains(&x)).map(|x| (x, y)));
    }
    out
}

/// Primitives of one shape in its own 10×10 box, before orientation.
fn local_primitives(shape: Shape, s: &ComponentState) -> Vec<Primitive> {
    use Category::*;
    match shape {
        Shape::Dash => {
            let n = s.count as i32 + 1;
            (0..n)
                .map(|i| {
                    let y = 2 * i + 5 - n;
                    prim(Straight, line(2, y, 7, y))
                })
                .collect()
        }
        Shape::Tick => {
            let n = s.count as i32 + 1;
            (0..n)
                .map(|i| {
                    let x = 2 * i + 4 - n;
                    prim(Slanted, line(x, 7, x + 3, 4))
                })
                .collect()
        }
        Shape::Arrow => vec![
            prim(Straight, line(1, 4, 8, 4)),
            prim(Slanted, line(7, 3, 5, 1)),
            prim(Slanted, line(7, 5, 5, 7)),
        ],
        Shape::Polygon => {
            let mut out = match s.count {
                0 => {
                    let mut ring = Vec::new();
                    for y in 0..SLOT {
                        for x in 0..SLOT {
                            let (dx, dy) = (x as f64 - 4.5, y as f64 - 4.5);
                            let r2 = dx * dx + dy * dy;
                            if (9.0..17.5).contains(&r2) {
                                ring.push((x, y));
                            }
                        }
                    }
                    vec![prim(Curved, ring)]
                }
                1 => vec![
                    prim(Straight, line(1, 8, 8, 8)),
                    prim(Slanted, line(1, 7, 4, 1)),
                    prim(Slanted, line(8, 7, 5, 1)),
                ],
                _ => vec![
                    prim(Straight, line(1, 1, 8, 1)),
                    prim(Straight, line(1, 8, 8, 8)),
                    prim(Straight, line(1, 2, 1, 7)),
                    prim(Straight, line(8, 2, 8, 7)),
                ],
            };
            if s.filled {
                let outline: Vec<(i32, i32)> = out.iter().flat_map(|p| p.pixels.iter().copied()).collect();
                out.push(prim(Filled, interior(&outline)));
            }
            out
        }
    }
}

/// Primitives of one component in canvas coordinates, untransformed view.
pub fn component_primitives(shape: Shape, s: &ComponentState) -> Vec<Primitive> {
    let turn = Dihedral::new(s.orientation, false);
    let (ox, oy) = (1 + SLOT * (s.slot % 3) as i32, 1 + SLOT * (s.slot / 3) as i32);
    let mut prims = local_primitives(shape, s);
    for p in &mut prims {
        for px in &mut p.pixels {
            let (x, y) = turn.apply(px.0, px.1, SLOT);
            *px = (ox + x, oy + y);
        }
    }
    prims
}

/// Everything visible in frame `t` of `program`, in canvas coordinates.
pub fn program_primitives(program: &TransformProgram, t: usize) -> Vec<Primitive> {
    let mut prims: Vec<Primitive> = program
        .components
        .iter()
        .flat_map(|c| component_primitives(c.shape, &c.state_at(t)))
        .collect();
    if program.view != Dihedral::IDENTITY {
        for p in &mut prims {
            for px in &mut p.pixels {
                *px = program.view.apply(px.0, px.1, EXTENT as i32);
            }
        }
    }
    prims
}

pub fn rasterize(prims: &[Primitive]) -> Frame {
    let mut f = Frame::blank(EXTENT, EXTENT);
    for &(x, y) in prims.iter().flat_map(|p| &p.pixels) {
        f.set(x as usize, y as usize, 1.0);
    }
    f
}

/// Frame `t` (1-based) of `program`.
pub fn render(program: &TransformProgram, t: usize) -> Frame {
    rasterize(&program_primitives(program, t))
}

/// One component alone on a blank canvas.
pub fn render_component(shape: Shape, s: &ComponentState) -> Frame {
    rasterize(&component_primitives(shape, s))
}

pub fn quadrant(x: i32, y: i32) -> usize {
    let half = EXTENT as i32 / 2;
    usize::from(x >= half) + 2 * usize::from(y >= half)
}

/// Counts each primitive once in every quadrant it touches.
pub fn labels_of(prims: &[Primitive]) -> Labels {
    let mut out = [0u8; 16];
    for p in prims {
        let mut hit = [false; 4];
        for &(x, y) in &p.pixels {
            hit[quadrant(x, y)] = true;
        }
        for (q, _) in hit.iter().enumerate().filter(|(_, &h)| h) {
            out[q * 4 + p.category as usize] += 1;
        }
    }
    out
}

pub fn labels(program: &TransformProgram, t: usize) -> Labels {
    labels_of(&program_primitives(program, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::program::{Component, ComponentState};

    fn single(shape: Shape, slot: u8, count: u8, orientation: u8, filled: bool) -> TransformProgram {
        TransformProgram {
            components: vec![Component {
                shape,
                start: ComponentState {
                    slot,
                    count,
                    orientation,
                    filled,
                },
                rules: vec![],
            }],
            view: Dihedral::IDENTITY,
        }
    }

    #[test]
    fn bresenham_endpoints_and_length() {
        let l = line(0, 0, 3, 3);
        assert_eq!(l, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(line(5, 1, 7, 3).len(), 3);
        assert_eq!(line(2, 4, 7, 4).len(), 6);
    }

    #[test]
    fn all_shapes_stay_in_their_slot() {
        for shape in [Shape::Tick, Shape::Arrow, Shape::Polygon, Shape::Dash] {
            for count in 0..shape.count_modulus() {
                for o in 0..4 {
                    for filled in [false, true] {
                        let s = ComponentState {
                            slot: 4,
                            count,
                            orientation: o,
                            filled,
                        };
                        for p in component_primitives(shape, &s) {
                            assert!(!p.pixels.is_empty());
                            for (x, y) in p.pixels {
                                assert!((11..21).contains(&x) && (11..21).contains(&y));
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn counts_by_hand() {
        // three dashes in the top-left corner slot
        let l = labels(&single(Shape::Dash, 0, 2, 0, false), 1);
        let mut want = [0u8; 16];
        want[Category::Straight as usize] = 3;
        assert_eq!(l, want);
        // a filled square in the bottom-right corner: four edges plus a region
        let l = labels(&single(Shape::Polygon, 8, 2, 0, true), 1);
        let mut want = [0u8; 16];
        want[12] = 4;
        want[15] = 1;
        assert_eq!(l, want);
        // the top-middle slot straddles the vertical midline
        let l = labels(&single(Shape::Polygon, 1, 0, 0, false), 1);
        assert_eq!(l[Category::Curved as usize], 1);
        assert_eq!(l[4 + Category::Curved as usize], 1);
    }

    #[test]
    fn rendering_is_binary_and_pure() {
        let p = single(Shape::Arrow, 2, 0, 1, false);
        let a = render(&p, 1);
        assert_eq!(a, render(&p, 1));
        assert!(a.pixels().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
