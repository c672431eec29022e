//! Sparse residual U-Net on voxel grids, with a hand-written backward pass.
//!
//! Activations are row-major `sites × channels`. Submanifold convolutions keep
//! the active sites of their level; stride-2 convolutions map level `l` onto
//! the parent sites `floor(c / 2)` and transposed ones map them back.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output dimension S.
    pub markers: usize,
    /// Channels per resolution level; its length is the number of levels.
    pub channels: Vec<usize>,
    /// Residual blocks per level on each side of the U.
    pub blocks: usize,
    /// Edge length of submanifold kernels (odd).
    pub kernel: usize,
    pub voxel_size: f64,
    /// Feed the mean voxel normal as three extra input channels.
    #[serde(default)]
    pub normals: bool,
}

impl ModelConfig {
    /// Three levels with 16, 32 and 64 channels, 3³ kernels, 2 cm voxels.
    pub fn new(markers: usize) -> Self {
        Self {
            markers,
            channels: vec![16, 32, 64],
            blocks: 1,
            kernel: 3,
            voxel_size: 0.02,
            normals: false,
        }
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn in_channels(&self) -> usize {
        if self.normals {
            4
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.markers == 0 {
            return Err(Error::InvalidInput("model needs at least one output marker".into()));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::InvalidInput("every level needs a positive channel count".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid voxel size {}", self.voxel_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ConvKind {
    Submanifold(usize),
    Down(usize),
    Up(usize),
    Pointwise,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvSpec {
    pub name: String,
    pub kind: ConvKind,
    pub taps: usize,
    pub cin: usize,
    pub cout: usize,
    /// Offset of `taps × cin × cout` weights, then `cout` biases.
    pub offset: usize,
    pub init_gain: f64,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.taps * self.cin * self.cout
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.cout
    }
}

/// Parameter layout in the fixed evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub stem: usize,
    /// `[level][block] -> (conv1, conv2)`.
    pub enc: Vec<Vec<(usize, usize)>>,
    pub down: Vec<usize>,
    pub up: Vec<usize>,
    pub dec: Vec<Vec<(usize, usize)>>,
    pub head: usize,
    pub convs: Vec<ConvSpec>,
    pub params: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut convs: Vec<ConvSpec> = Vec::new();
        let mut offset = 0;
        let sub_taps = cfg.kernel.pow(3);
        let mut add = |name: String, kind, taps, cin, cout, gain| {
            let spec = ConvSpec {
                name,
                kind,
                taps,
                cin,
                cout,
                offset,
                init_gain: gain,
            };
            offset += spec.len();
            convs.push(spec);
            convs.len() - 1
        };
        let ch = &cfg.channels;
        let levels = ch.len();
        let stem = add(
            "stem".into(),
            ConvKind::Submanifold(0),
            sub_taps,
            cfg.in_channels(),
            ch[0],
            1.0,
        );
        let block = |add: &mut dyn FnMut(String, ConvKind, usize, usize, usize, f64) -> usize, side: &str, l: usize| {
            (0..cfg.blocks)
                .map(|b| {
                    let c = ch[l];
                    (
                        add(
                            format!("{side}{l}.{b}.a"),
                            ConvKind::Submanifold(l),
                            sub_taps,
                            c,
                            c,
                            1.0,
                        ),
                        add(
                            format!("{side}{l}.{b}.b"),
                            ConvKind::Submanifold(l),
                            sub_taps,
                            c,
                            c,
                            0.25,
                        ),
                    )
                })
                .collect::<Vec<_>>()
        };
        let enc: Vec<_> = (0..levels).map(|l| block(&mut add, "enc", l)).collect();
        let down: Vec<_> = (0..levels - 1)
            .map(|l| add(format!("down{l}"), ConvKind::Down(l), 8, ch[l], ch[l + 1], 1.0))
            .collect();
        let up: Vec<_> = (0..levels - 1)
            .map(|l| add(format!("up{l}"), ConvKind::Up(l), 8, ch[l + 1], ch[l], 1.0))
            .collect();
        let dec: Vec<_> = (0..levels - 1).map(|l| block(&mut add, "dec", l)).collect();
        let head = add("head".into(), ConvKind::Pointwise, 1, ch[0], cfg.markers, 0.5);
        Self {
            stem,
            enc,
            down,
            up,
            dec,
            head,
            convs,
            params: offset,
        }
    }

    /// He-normal weights, zero biases.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.params];
        for c in &self.convs {
            let fan_in = match c.kind {
                ConvKind::Up(_) => c.cin,
                _ => c.taps * c.cin,
            };
            let std = c.init_gain * (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in &mut p[c.offset..c.bias_offset()] {
                *w = normal.sample(&mut rng);
            }
        }
        p
    }
}

/// One `(input site, output site)` list per kernel tap; `None` is the identity.
#[derive(Debug, Clone, Default)]
pub(crate) struct KernelMap {
    pub taps: Vec<Option<Vec<(u32, u32)>>>,
}

/// Active sites per level and the kernel maps between them.
#[derive(Debug, Clone)]
pub(crate) struct Hierarchy {
    pub sizes: Vec<usize>,
    pub sub: Vec<KernelMap>,
    /// Fine site of level `l` to its parent at level `l + 1`.
    pub down: Vec<KernelMap>,
}

impl Hierarchy {
    pub fn new(coords: &[[i32; 3]], levels: usize, kernel: usize) -> Self {
        let r = (kernel / 2) as i32;
        let mut level_coords = vec![coords.to_vec()];
        let mut sub = Vec::with_capacity(levels);
        let mut down = Vec::with_capacity(levels.saturating_sub(1));
        for l in 0..levels {
            let cur = &level_coords[l];
            let index: HashMap<[i32; 3], u32> = cur.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
            let mut taps = Vec::with_capacity(kernel.pow(3));
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx == 0 && dy == 0 && dz == 0 {
                            taps.push(None);
                            continue;
                        }
                        let pairs: Vec<(u32, u32)> = cur
                            .iter()
                            .enumerate()
                            .filter_map(|(o, c)| index.get(&[c[0] + dx, c[1] + dy, c[2] + dz]).map(|&i| (i, o as u32)))
                            .collect();
                        taps.push(Some(pairs));
                    }
                }
            }
            sub.push(KernelMap { taps });
            if l + 1 < levels {
                let mut parents: Vec<[i32; 3]> = cur.iter().map(|c| c.map(|x| x.div_euclid(2))).collect();
                parents.sort_unstable();
                parents.dedup();
                let pindex: HashMap<[i32; 3], u32> = parents.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
                let mut taps = vec![Vec::new(); 8];
                for (i, c) in cur.iter().enumerate() {
                    let p = c.map(|x| x.div_euclid(2));
                    let k = ((c[0] - 2 * p[0]) * 4 + (c[1] - 2 * p[1]) * 2 + (c[2] - 2 * p[2])) as usize;
                    taps[k].push((i as u32, pindex[&p]));
                }
                down.push(KernelMap {
                    taps: taps.into_iter().map(Some).collect(),
                });
                level_coords.push(parents);
            }
        }
        Self {
            sizes: level_coords.iter().map(Vec::len).collect(),
            sub,
            down,
        }
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major; `ta`/`tb` read the stored
/// matrix transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64]) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices hold at least m·k, k·n and m·n elements with the
    // given strides, and c does not alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Convolution over a kernel map; `transposed` swaps the roles of the pair
/// entries (used by the upsampling layer).
pub(crate) fn conv_forward(
    p: &[f64],
    spec: &ConvSpec,
    map: &KernelMap,
    transposed: bool,
    x: &[f64],
    n_out: usize,
) -> Vec<f64> {
    let (cin, cout) = (spec.cin, spec.cout);
    let bias = &p[spec.bias_offset()..spec.bias_offset() + cout];
    let mut out: Vec<f64> = (0..n_out).flat_map(|_| bias.iter().copied()).collect();
    let mut gathered = Vec::new();
    let mut partial = Vec::new();
    for (k, tap) in map.taps.iter().enumerate() {
        let w = &p[spec.offset + k * cin * cout..spec.offset + (k + 1) * cin * cout];
        match tap {
            None => gemm(n_out, cin, cout, x, false, w, false, &mut out),
            Some(pairs) if !pairs.is_empty() => {
                gathered.clear();
                for &(i, o) in pairs {
                    let src = if transposed { o } else { i } as usize;
                    gathered.extend_from_slice(&x[src * cin..(src + 1) * cin]);
                }
                partial.clear();
                partial.resize(pairs.len() * cout, 0.0);
                gemm(pairs.len(), cin, cout, &gathered, false, w, false, &mut partial);
                for (j, &(i, o)) in pairs.iter().enumerate() {
                    let dst = if transposed { i } else { o } as usize;
                    let row = &mut out[dst * cout..(dst + 1) * cout];
                    row.iter_mut()
                        .zip(&partial[j * cout..(j + 1) * cout])
                        .for_each(|(a, b)| *a += b);
                }
            }
            Some(_) => {}
        }
    }
    out
}

/// Accumulates parameter gradients into `g` and, if given, input gradients
/// into `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    p: &[f64],
    g: &mut [f64],
    spec: &ConvSpec,
    map: &KernelMap,
    transposed: bool,
    x: &[f64],
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
) {
    let (cin, cout) = (spec.cin, spec.cout);
    let n_out = dy.len() / cout;
    {
        let gb = &mut g[spec.bias_offset()..spec.bias_offset() + cout];
        for row in dy.chunks_exact(cout) {
            gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
    }
    let mut gx = Vec::new();
    let mut gy = Vec::new();
    let mut part = Vec::new();
    for (k, tap) in map.taps.iter().enumerate() {
        let range = spec.offset + k * cin * cout..spec.offset + (k + 1) * cin * cout;
        match tap {
            None => {
                gemm(cin, n_out, cout, x, true, dy, false, &mut g[range.clone()]);
                if let Some(dx) = dx.as_deref_mut() {
                    gemm(n_out, cout, cin, dy, false, &p[range], true, dx);
                }
            }
            Some(pairs) if !pairs.is_empty() => {
                gx.clear();
                gy.clear();
                for &(i, o) in pairs {
                    let (src, dst) = if transposed { (o, i) } else { (i, o) };
                    gx.extend_from_slice(&x[src as usize * cin..(src as usize + 1) * cin]);
                    gy.extend_from_slice(&dy[dst as usize * cout..(dst as usize + 1) * cout]);
                }
                gemm(cin, pairs.len(), cout, &gx, true, &gy, false, &mut g[range.clone()]);
                if let Some(dx) = dx.as_deref_mut() {
                    part.clear();
                    part.resize(pairs.len() * cin, 0.0);
                    gemm(pairs.len(), cout, cin, &gy, false, &p[range], true, &mut part);
                    for (j, &(i, o)) in pairs.iter().enumerate() {
                        let src = if transposed { o } else { i } as usize;
                        let row = &mut dx[src * cin..(src + 1) * cin];
                        row.iter_mut()
                            .zip(&part[j * cin..(j + 1) * cin])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            Some(_) => {}
        }
    }
}

fn relu(mut v: Vec<f64>) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    v
}

/// Zeroes `d` where the ReLU output `y` is not positive.
fn relu_mask(d: &mut [f64], y: &[f64]) {
    d.iter_mut().zip(y).for_each(|(g, &a)| {
        if a <= 0.0 {
            *g = 0.0
        }
    });
}

fn add(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

struct BlockTape {
    x: Vec<f64>,
    a: Vec<f64>,
    y: Vec<f64>,
}

/// Activations kept for the backward pass.
pub(crate) struct Tape {
    input: Vec<f64>,
    stem: Vec<f64>,
    enc: Vec<Vec<BlockTape>>,
    skips: Vec<Vec<f64>>,
    down: Vec<Vec<f64>>,
    up_in: Vec<Vec<f64>>,
    up: Vec<Vec<f64>>,
    dec: Vec<Vec<BlockTape>>,
    last: Vec<f64>,
}

impl Tape {
    /// Sign pattern of every ReLU output; equal patterns mean the network is
    /// the same linear map.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let blocks = self.enc.iter().chain(&self.dec).flatten().flat_map(|b| [&b.a, &b.y]);
        std::iter::once(&self.stem)
            .chain(blocks)
            .chain(&self.down)
            .chain(&self.up)
            .flat_map(|v| v.iter().map(|&x| x > 0.0))
            .collect()
    }
}

pub(crate) struct Network<'a> {
    pub layout: &'a Layout,
    pub params: &'a [f64],
    pub hierarchy: &'a Hierarchy,
}

impl Network<'_> {
    fn conv(&self, idx: usize, x: &[f64]) -> Vec<f64> {
        let spec = &self.layout.convs[idx];
        let h = self.hierarchy;
        match spec.kind {
            ConvKind::Submanifold(l) => conv_forward(self.params, spec, &h.sub[l], false, x, h.sizes[l]),
            ConvKind::Down(l) => conv_forward(self.params, spec, &h.down[l], false, x, h.sizes[l + 1]),
            ConvKind::Up(l) => conv_forward(self.params, spec, &h.down[l], true, x, h.sizes[l]),
            ConvKind::Pointwise => {
                let map = KernelMap { taps: vec![None] };
                conv_forward(self.params, spec, &map, false, x, x.len() / spec.cin)
            }
        }
    }

    fn conv_back(&self, g: &mut [f64], idx: usize, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        let spec = &self.layout.convs[idx];
        let h = self.hierarchy;
        let identity = KernelMap { taps: vec![None] };
        let (map, transposed) = match spec.kind {
            ConvKind::Submanifold(l) => (&h.sub[l], false),
            ConvKind::Down(l) => (&h.down[l], false),
            ConvKind::Up(l) => (&h.down[l], true),
            ConvKind::Pointwise => (&identity, false),
        };
        conv_backward(self.params, g, spec, map, transposed, x, dy, dx);
    }

    fn block(&self, (c1, c2): (usize, usize), x: Vec<f64>) -> BlockTape {
        let a = relu(self.conv(c1, &x));
        let mut z = self.conv(c2, &a);
        add(&mut z, &x);
        BlockTape { y: relu(z), x, a }
    }

    fn block_back(&self, g: &mut [f64], (c1, c2): (usize, usize), t: &BlockTape, mut dy: Vec<f64>) -> Vec<f64> {
        relu_mask(&mut dy, &t.y);
        let mut da = vec![0.0; t.a.len()];
        self.conv_back(g, c2, &t.a, &dy, Some(&mut da));
        relu_mask(&mut da, &t.a);
        let mut dx = dy;
        self.conv_back(g, c1, &t.x, &da, Some(&mut dx));
        dx
    }

    /// Per-voxel logits, `voxels × markers`.
    pub fn forward(&self, features: &[f64]) -> (Vec<f64>, Tape) {
        let lay = self.layout;
        let levels = lay.enc.len();
        let stem = relu(self.conv(lay.stem, features));
        let mut h = stem.clone();
        let mut enc = Vec::with_capacity(levels);
        let mut skips = Vec::with_capacity(levels);
        let mut down = Vec::with_capacity(levels);
        for l in 0..levels {
            let mut tapes = Vec::with_capacity(lay.enc[l].len());
            for &b in &lay.enc[l] {
                let t = self.block(b, h);
                h = t.y.clone();
                tapes.push(t);
            }
            enc.push(tapes);
            skips.push(h.clone());
            if l + 1 < levels {
                h = relu(self.conv(lay.down[l], &h));
                down.push(h.clone());
            }
        }
        let mut up_in = vec![Vec::new(); levels - 1];
        let mut up = vec![Vec::new(); levels - 1];
        let mut dec: Vec<Vec<BlockTape>> = (0..levels - 1).map(|_| Vec::new()).collect();
        for l in (0..levels - 1).rev() {
            let u = relu(self.conv(lay.up[l], &h));
            up_in[l] = std::mem::take(&mut h);
            h = u.clone();
            add(&mut h, &skips[l]);
            up[l] = u;
            for &b in &lay.dec[l] {
                let t = self.block(b, h);
                h = t.y.clone();
                dec[l].push(t);
            }
        }
        let logits = self.conv(lay.head, &h);
        (
            logits,
            Tape {
                input: features.to_vec(),
                stem,
                enc,
                skips,
                down,
                up_in,
                up,
                dec,
                last: h,
            },
        )
    }

    /// Gradient of the loss w.r.t. every parameter, given `d loss / d logits`.
    pub fn backward(&self, tape: &Tape, dlogits: &[f64]) -> Vec<f64> {
        let lay = self.layout;
        let levels = lay.enc.len();
        let mut g = vec![0.0; lay.params];
        let mut dh = vec![0.0; tape.last.len()];
        self.conv_back(&mut g, lay.head, &tape.last, dlogits, Some(&mut dh));

        let mut dskip = vec![Vec::new(); levels];
        for l in 0..levels - 1 {
            for (b, t) in lay.dec[l].iter().zip(&tape.dec[l]).rev() {
                dh = self.block_back(&mut g, *b, t, dh);
            }
            let mut du = dh.clone();
            dskip[l] = dh;
            relu_mask(&mut du, &tape.up[l]);
            let mut dcoarse = vec![0.0; tape.up_in[l].len()];
            self.conv_back(&mut g, lay.up[l], &tape.up_in[l], &du, Some(&mut dcoarse));
            dh = dcoarse;
        }
        // dh is now the gradient at the bottom encoder output
        let mut g_next: Vec<f64> = Vec::new();
        for l in (0..levels).rev() {
            let mut d = if l + 1 == levels {
                std::mem::take(&mut dh)
            } else {
                let mut dd = std::mem::take(&mut g_next);
                relu_mask(&mut dd, &tape.down[l]);
                let mut d = std::mem::take(&mut dskip[l]);
                self.conv_back(&mut g, lay.down[l], &tape.skips[l], &dd, Some(&mut d));
                d
            };
            for (b, t) in lay.enc[l].iter().zip(&tape.enc[l]).rev() {
                d = self.block_back(&mut g, *b, t, d);
            }
            g_next = d;
        }
        relu_mask(&mut g_next, &tape.stem);
        self.conv_back(&mut g, lay.stem, &tape.input, &g_next, None);
        g
    }
}
