//! Hand-weighted ReLU network that reproduces the rasterizer.
//!
//! For each pixel and each of its four sides, the input layer computes the
//! four orientation values of the segment/side crossing test as affine
//! functions of `ζ` (the cross term `z5` makes them affine). Sign
//! disagreement is detected with `m(a, b) = |a+b| − |a| − |b|`, which is
//! negative exactly when `a` and `b` have strictly opposite signs. A side is
//! crossed when both orientation pairs disagree, i.e. `max(m12, m34) < 0`,
//! and a pixel is lit when any side is crossed, i.e. the minimum over the
//! four sides is negative.
//!
//! Per pixel and line the gadget stage uses
//!
//! | layer | neurons | contents                                   |
//! |-------|---------|--------------------------------------------|
//! | 1     | 48      | `±(O1+O2), ±O1, ±O2, ±(O3+O4), ±O3, ±O4` per side |
//! | 2     | 8       | per side: `relu(−m34)`, `relu(m12 − m34)`   |
//! | 3     | 8       | two two-input minimum gadgets              |
//! | 4     | 4       | final two-input minimum gadget             |
//!
//! for 68 ReLUs, followed by an identity read-out of the pixel value `v`.
//! Layer 2 carries `m34` with a single neuron because `m34 ≤ 0`.
//!
//! With two runway lines a combination stage takes the per-pixel minimum of
//! the two `v` values (4 ReLUs per pixel), and the binarization stage maps
//! `v` to `clamp(−k·v, 0, 1)` (2 ReLUs per pixel, see
//! [`build_binarization_stage`]).

use serde::{Deserialize, Serialize};

use crate::camera::{pixel_edges, PixelEdge, ZetaCoords};
use crate::network::{Activation, Layer, LayeredReluNetwork, NetworkError};

pub use crate::camera::pixel_edges as edges_of_pixel;

/// ReLUs in the per-line gadget stage of one pixel.
pub const RELUS_PER_PIXEL: usize = 68;

const L1_BLOCK: usize = 48;
const L2_BLOCK: usize = 8;
const L3_BLOCK: usize = 8;
const L4_BLOCK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionBuildSpec {
    pub q: usize,
    pub lines: usize,
    /// Binarization slope `k`.
    pub sharpness: f64,
    /// Pixel values with `|v|` at or below this are treated as degenerate.
    pub degeneracy_margin: f64,
}

impl PerceptionBuildSpec {
    pub fn new(q: usize, lines: usize) -> Self {
        Self {
            q,
            lines,
            sharpness: 1e3,
            degeneracy_margin: 1e-9,
        }
    }

    /// Output level above which a pixel counts as lit: `k·δ_deg`, the
    /// binarized value of a pixel exactly at the degeneracy margin (capped
    /// at 1/2).
    pub fn lit_threshold(&self) -> f64 {
        (self.sharpness * self.degeneracy_margin).min(0.5)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.q < 2 || !(1..=2).contains(&self.lines) {
            return Err(NetworkError::Invalid(format!(
                "perception needs q >= 2 and 1 or 2 lines, got q={} lines={}",
                self.q, self.lines
            )));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) || !(self.degeneracy_margin >= 0.0)
        {
            return Err(NetworkError::Invalid(
                "sharpness must be positive and the degeneracy margin non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// The four orientation values of segment `(z1,z2)–(z3,z4)` against `edge`.
pub fn edge_o_values(zeta: &ZetaCoords, edge: &PixelEdge) -> [f64; 4] {
    let [z1, z2, z3, z4, z5] = zeta.0;
    let PixelEdge { ax, ay, bx, by } = *edge;
    [
        z1 * (ay - by) + z2 * (bx - ax) + ax * by - ay * bx,
        z3 * (ay - by) + z4 * (bx - ax) + ax * by - ay * bx,
        -z1 * ay + z2 * ax + z3 * ay - z4 * ax + z5,
        -z1 * by + z2 * bx + z3 * by - z4 * bx + z5,
    ]
}

/// Signed crossing margin of pixel `(i, j)` for one line. On a lit pixel it
/// equals the gadget value `v`; on an unlit pixel, where `v = 0`, it is the
/// positive amount by which orientation values must move before a side is
/// crossed. Pixels with `|margin| ≤ δ_deg` are degenerate.
pub fn pixel_margin(zeta: &ZetaCoords, i: usize, j: usize) -> f64 {
    let pair = |a: f64, b: f64| {
        let m = 2.0 * a.abs().min(b.abs());
        if a * b < 0.0 {
            -m
        } else {
            m
        }
    };
    pixel_edges(i, j)
        .iter()
        .map(|e| {
            let o = edge_o_values(zeta, e);
            pair(o[0], o[1]).max(pair(o[2], o[3]))
        })
        .fold(f64::INFINITY, f64::min)
}

/// Affine forms `(weights over ζ, bias)` of the four orientation values.
fn o_forms(edge: &PixelEdge) -> [([f64; 5], f64); 4] {
    let PixelEdge { ax, ay, bx, by } = *edge;
    let c = ax * by - ay * bx;
    [
        ([ay - by, bx - ax, 0.0, 0.0, 0.0], c),
        ([0.0, 0.0, ay - by, bx - ax, 0.0], c),
        ([-ay, ax, ay, -ax, 1.0], 0.0),
        ([-by, bx, by, -bx, 1.0], 0.0),
    ]
}

fn sum_form(a: &([f64; 5], f64), b: &([f64; 5], f64)) -> ([f64; 5], f64) {
    (std::array::from_fn(|k| a.0[k] + b.0[k]), a.1 + b.1)
}

fn two_layer(
    inputs: usize,
    hidden: Vec<(usize, usize, f64)>,
    hidden_rows: usize,
    readout: Vec<(usize, usize, f64)>,
) -> LayeredReluNetwork {
    let l1 = Layer::from_triplets(hidden_rows, inputs, hidden, vec![0.0; hidden_rows], Activation::Relu)
        .expect("gadget hidden layer");
    let l2 = Layer::from_triplets(1, hidden_rows, readout, vec![0.0], Activation::Identity)
        .expect("gadget readout");
    LayeredReluNetwork::new(inputs, vec![l1, l2]).expect("gadget network")
}

/// `|x| = relu(x) + relu(−x)`.
pub fn build_abs_gadget() -> LayeredReluNetwork {
    two_layer(1, vec![(0, 0, 1.0), (1, 0, -1.0)], 2, vec![(0, 0, 1.0), (0, 1, 1.0)])
}

/// `m(a, b) = |a+b| − |a| − |b|`.
pub fn build_sign_mismatch_gadget() -> LayeredReluNetwork {
    let hidden = vec![
        (0, 0, 1.0),
        (0, 1, 1.0),
        (1, 0, -1.0),
        (1, 1, -1.0),
        (2, 0, 1.0),
        (3, 0, -1.0),
        (4, 1, 1.0),
        (5, 1, -1.0),
    ];
    let readout = [1.0, 1.0, -1.0, -1.0, -1.0, -1.0]
        .iter()
        .enumerate()
        .map(|(k, &w)| (0, k, w))
        .collect();
    two_layer(2, hidden, 6, readout)
}

fn sum_diff_hidden() -> Vec<(usize, usize, f64)> {
    vec![
        (0, 0, 1.0),
        (0, 1, 1.0),
        (1, 0, -1.0),
        (1, 1, -1.0),
        (2, 0, 1.0),
        (2, 1, -1.0),
        (3, 0, -1.0),
        (3, 1, 1.0),
    ]
}

/// `min(a, b) = (a+b)/2 − |a−b|/2`.
pub fn build_min_gadget() -> LayeredReluNetwork {
    let readout = [0.5, -0.5, -0.5, -0.5].iter().enumerate().map(|(k, &w)| (0, k, w)).collect();
    two_layer(2, sum_diff_hidden(), 4, readout)
}

/// `max(a, b) = −min(−a, −b) = (a+b)/2 + |a−b|/2`.
pub fn build_max_gadget() -> LayeredReluNetwork {
    let readout = [0.5, -0.5, 0.5, 0.5].iter().enumerate().map(|(k, &w)| (0, k, w)).collect();
    two_layer(2, sum_diff_hidden(), 4, readout)
}

/// `clamp(−k·v, 0, 1)` applied to each of `n` inputs, as
/// `1 − relu(1 − relu(−k·v))`. This equals `relu(−k·v) − relu(−k·v − 1)`
/// and uses the same two ReLUs per pixel, but as a chain of monotone maps
/// its interval bounds never leave `[0, 1]`.
pub fn build_binarization_stage(k: f64, n: usize) -> LayeredReluNetwork {
    let diag = |w: f64, b: f64, act| {
        Layer::from_triplets(n, n, (0..n).map(|p| (p, p, w)).collect(), vec![b; n], act)
            .expect("binarization layer")
    };
    let layers = vec![
        diag(-k, 0.0, Activation::Relu),
        diag(-1.0, 1.0, Activation::Relu),
        diag(-1.0, 1.0, Activation::Identity),
    ];
    LayeredReluNetwork::new(n, layers).expect("binarization network")
}

/// Triplet buffers for the five layers of the gadget stage.
#[derive(Default)]
struct GadgetLayers {
    l: [Vec<(usize, usize, f64)>; 5],
    b1: Vec<f64>,
}

impl GadgetLayers {
    /// Appends the gadget of pixel `(i, j)` reading `ζ` from input columns
    /// `col0..col0+5` into block `block` of every layer.
    fn push_pixel(&mut self, block: usize, col0: usize, i: usize, j: usize) {
        let edges = pixel_edges(i, j);
        let r1 = block * L1_BLOCK;
        for (e, edge) in edges.iter().enumerate() {
            let [o1, o2, o3, o4] = o_forms(edge);
            let forms = [sum_form(&o1, &o2), o1, o2, sum_form(&o3, &o4), o3, o4];
            for (f, form) in forms.iter().enumerate() {
                for (sign, offset) in [(1.0, 0), (-1.0, 1)] {
                    let row = r1 + 12 * e + 2 * f + offset;
                    for (c, &w) in form.0.iter().enumerate() {
                        if w != 0.0 {
                            self.l[0].push((row, col0 + c, sign * w));
                        }
                    }
                    self.b1.push(sign * form.1);
                    debug_assert_eq!(self.b1.len(), row + 1);
                }
            }
        }
        // Layer 2: m12 = n0+n1−n2−n3−n4−n5 and m34 likewise over n6..n11.
        const M: [f64; 6] = [1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
        let r2 = block * L2_BLOCK;
        for e in 0..4 {
            let base = r1 + 12 * e;
            for k in 0..6 {
                // carry: relu(−m34)
                self.l[1].push((r2 + 2 * e, base + 6 + k, -M[k]));
                // relu(m12 − m34)
                self.l[1].push((r2 + 2 * e + 1, base + k, M[k]));
                self.l[1].push((r2 + 2 * e + 1, base + 6 + k, -M[k]));
            }
        }
        // Side value E_e = −carry + relu(m12 − m34) = max(m12, m34).
        let side = |e: usize| [(r2 + 2 * e, -1.0), (r2 + 2 * e + 1, 1.0)];
        let r3 = block * L3_BLOCK;
        for pair in 0..2 {
            let (a, b) = (side(2 * pair), side(2 * pair + 1));
            push_sum_diff(&mut self.l[2], r3 + 4 * pair, &a, &b);
        }
        // Pair minima F_p = (s − s⁻ − d − d⁻)/2 over layer-3 neurons.
        let pair_min = |p: usize| {
            let r = r3 + 4 * p;
            [(r, 0.5), (r + 1, -0.5), (r + 2, -0.5), (r + 3, -0.5)]
        };
        let r4 = block * L4_BLOCK;
        push_sum_diff(&mut self.l[3], r4, &pair_min(0), &pair_min(1));
        for (k, w) in [0.5, -0.5, -0.5, -0.5].into_iter().enumerate() {
            self.l[4].push((block, r4 + k, w));
        }
    }

    fn finish(self, inputs: usize, blocks: usize) -> LayeredReluNetwork {
        let [t1, t2, t3, t4, t5] = self.l;
        let layers = vec![
            Layer::from_triplets(blocks * L1_BLOCK, inputs, t1, self.b1, Activation::Relu),
            Layer::from_triplets(blocks * L2_BLOCK, blocks * L1_BLOCK, t2, vec![0.0; blocks * L2_BLOCK], Activation::Relu),
            Layer::from_triplets(blocks * L3_BLOCK, blocks * L2_BLOCK, t3, vec![0.0; blocks * L3_BLOCK], Activation::Relu),
            Layer::from_triplets(blocks * L4_BLOCK, blocks * L3_BLOCK, t4, vec![0.0; blocks * L4_BLOCK], Activation::Relu),
            Layer::from_triplets(blocks, blocks * L4_BLOCK, t5, vec![0.0; blocks], Activation::Identity),
        ]
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .expect("gadget stage layers");
        LayeredReluNetwork::new(inputs, layers).expect("gadget stage network")
    }
}

/// Rows `[s, −s, d, −d]` with `s = a + b`, `d = a − b`, where `a` and `b` are
/// linear combinations `(column, weight)` of the previous layer.
fn push_sum_diff(
    out: &mut Vec<(usize, usize, f64)>,
    row: usize,
    a: &[(usize, f64)],
    b: &[(usize, f64)],
) {
    for &(c, w) in a {
        out.push((row, c, w));
        out.push((row + 1, c, -w));
        out.push((row + 2, c, w));
        out.push((row + 3, c, -w));
    }
    for &(c, w) in b {
        out.push((row, c, w));
        out.push((row + 1, c, -w));
        out.push((row + 2, c, -w));
        out.push((row + 3, c, w));
    }
}

/// 5-input, 1-output network whose value is negative iff the `ζ` segment
/// strictly crosses a side of pixel `(i, j)`.
pub fn build_pixel_gadget(i: usize, j: usize) -> LayeredReluNetwork {
    let mut g = GadgetLayers::default();
    g.push_pixel(0, 0, i, j);
    g.finish(5, 1)
}

/// Gadget stage for every pixel and line: input `5·lines`, output
/// `lines·q²` pixel values ordered by line, then pixel (row-major in `(i, j)`).
pub fn build_gadget_stage(q: usize, lines: usize) -> LayeredReluNetwork {
    let mut g = GadgetLayers::default();
    let pixels = q * q;
    for line in 0..lines {
        for i in 1..=q {
            for j in 1..=q {
                let block = line * pixels + (i - 1) * q + (j - 1);
                g.push_pixel(block, 5 * line, i, j);
            }
        }
    }
    g.finish(5 * lines, lines * pixels)
}

/// Per-pixel minimum over two lines: input `2·n` (line-major), output `n`.
pub fn build_line_combination(n: usize) -> LayeredReluNetwork {
    let mut hidden = Vec::with_capacity(16 * n);
    let mut readout = Vec::with_capacity(4 * n);
    for p in 0..n {
        push_sum_diff(&mut hidden, 4 * p, &[(p, 1.0)], &[(n + p, 1.0)]);
        for (k, w) in [0.5, -0.5, -0.5, -0.5].into_iter().enumerate() {
            readout.push((p, 4 * p + k, w));
        }
    }
    let l1 = Layer::from_triplets(4 * n, 2 * n, hidden, vec![0.0; 4 * n], Activation::Relu)
        .expect("combination layer");
    let l2 = Layer::from_triplets(n, 4 * n, readout, vec![0.0; n], Activation::Identity)
        .expect("combination readout");
    LayeredReluNetwork::new(2 * n, vec![l1, l2]).expect("combination network")
}

/// ReLU counts per stage of an assembled perception network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronManifest {
    pub q: usize,
    pub lines: usize,
    /// Gadget stage, all lines together (`68·q²·lines`).
    pub gadget: usize,
    pub line_combination: usize,
    pub binarization: usize,
    pub total: usize,
}

/// Staged perception network.
#[derive(Debug, Clone)]
pub struct PerceptionModel {
    pub spec: PerceptionBuildSpec,
    /// `ζ` → per-line pixel values `v`.
    pub gadget_stage: LayeredReluNetwork,
    /// Per-line values → combined pixel values (two lines only).
    pub combination: Option<LayeredReluNetwork>,
    /// Combined pixel values → soft binary image.
    pub binarization: LayeredReluNetwork,
    /// Full `ζ` → image network, the stages composed without fusing.
    pub network: LayeredReluNetwork,
}

impl PerceptionModel {
    pub fn manifest(&self) -> NeuronManifest {
        let gadget = self.gadget_stage.relu_count();
        let line_combination = self.combination.as_ref().map_or(0, |c| c.relu_count());
        let binarization = self.binarization.relu_count();
        NeuronManifest {
            q: self.spec.q,
            lines: self.spec.lines,
            gadget,
            line_combination,
            binarization,
            total: self.network.relu_count(),
        }
    }

    /// Thresholded network outputs.
    pub fn binarize(&self, outputs: &[f64]) -> Vec<bool> {
        let t = self.spec.lit_threshold();
        outputs.iter().map(|&o| o > t).collect()
    }

    /// Signed margins of every pixel for the network input `input`, the
    /// minimum over lines; see [`pixel_margin`].
    pub fn pixel_margins(&self, input: &[f64]) -> Vec<f64> {
        let q = self.spec.q;
        let mut out = vec![f64::INFINITY; q * q];
        for zeta in input.chunks_exact(5) {
            let zeta = ZetaCoords(zeta.try_into().expect("chunks of five"));
            for i in 1..=q {
                for j in 1..=q {
                    let m = &mut out[(i - 1) * q + (j - 1)];
                    *m = m.min(pixel_margin(&zeta, i, j));
                }
            }
        }
        out
    }

    /// Combined pixel values `v` (negative = lit) before binarization.
    pub fn pixel_values(&self, input: &[f64]) -> Vec<f64> {
        let v = self.gadget_stage.forward(input);
        match &self.combination {
            Some(c) => c.forward(&v),
            None => v,
        }
    }
}

/// Builds the perception network `ζ → image` for a `q × q` camera.
pub fn assemble_perception_network(spec: &PerceptionBuildSpec) -> Result<PerceptionModel, NetworkError> {
    spec.validate()?;
    let pixels = spec.q * spec.q;
    let gadget_stage = build_gadget_stage(spec.q, spec.lines);
    let combination = (spec.lines == 2).then(|| build_line_combination(pixels));
    let binarization = build_binarization_stage(spec.sharpness, pixels);
    let mut network = gadget_stage.clone();
    if let Some(c) = &combination {
        network = LayeredReluNetwork::compose(&network, c)?;
    }
    network = LayeredReluNetwork::compose(&network, &binarization)?;
    Ok(PerceptionModel {
        spec: *spec,
        gadget_stage,
        combination,
        binarization,
        network,
    })
}

/// `NN_aug = controller ∘ perception`.
pub fn build_augmented_network(
    perception: &LayeredReluNetwork,
    controller: &LayeredReluNetwork,
) -> Result<LayeredReluNetwork, NetworkError> {
    LayeredReluNetwork::compose(perception, controller)
}
