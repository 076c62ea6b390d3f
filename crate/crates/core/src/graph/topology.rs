use std::fmt;

/// Block type and construction arguments for one row of the topology.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        c1: usize,
        c2: usize,
        k: usize,
        s: usize,
    },
    C2f {
        c1: usize,
        c2: usize,
        n: usize,
        shortcut: bool,
    },
    ScDown {
        c1: usize,
        c2: usize,
        k: usize,
        s: usize,
    },
    Sppf {
        c1: usize,
        c2: usize,
        k: usize,
    },
    Psa {
        c: usize,
    },
    Upsample,
    Concat,
    C2fCib {
        c1: usize,
        c2: usize,
        n: usize,
        shortcut: bool,
        large_kernel: bool,
    },
    Detect {
        nc: usize,
        reg_max: usize,
        channels: Vec<usize>,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "Conv",
            LayerKind::C2f { .. } => "C2f",
            LayerKind::ScDown { .. } => "SCDown",
            LayerKind::Sppf { .. } => "SPPF",
            LayerKind::Psa { .. } => "PSA",
            LayerKind::Upsample => "Upsample",
            LayerKind::Concat => "Concat",
            LayerKind::C2fCib { .. } => "C2fCIB",
            LayerKind::Detect { .. } => "V10Detect",
        }
    }
}

/// Where a layer reads its input from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Input {
    Previous,
    Layer(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub index: usize,
    pub kind: LayerKind,
    pub inputs: Vec<Input>,
}

impl LayerSpec {
    /// Absolute indices of the layers this one reads; empty for the network input.
    pub fn sources(&self) -> Vec<usize> {
        self.inputs
            .iter()
            .filter_map(|i| match *i {
                Input::Previous => self.index.checked_sub(1),
                Input::Layer(j) => Some(j),
            })
            .collect()
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>2} {}", self.index, self.kind.name())
    }
}

/// The 24-row nano topology.
pub fn yolov10n_layers(nc: usize, reg_max: usize) -> Vec<LayerSpec> {
    use Input::*;
    use LayerKind::*;
    let rows: Vec<(LayerKind, Vec<Input>)> = vec![
        (
            Conv {
                c1: 3,
                c2: 16,
                k: 3,
                s: 2,
            },
            vec![Previous],
        ),
        (
            Conv {
                c1: 16,
                c2: 32,
                k: 3,
                s: 2,
            },
            vec![Previous],
        ),
        (
            C2f {
                c1: 32,
                c2: 32,
                n: 1,
                shortcut: true,
            },
            vec![Previous],
        ),
        (
            Conv {
                c1: 32,
                c2: 64,
                k: 3,
                s: 2,
            },
            vec![Previous],
        ),
        (
            C2f {
                c1: 64,
                c2: 64,
                n: 2,
                shortcut: true,
            },
            vec![Previous],
        ),
        (
            ScDown {
                c1: 64,
                c2: 128,
                k: 3,
                s: 2,
            },
            vec![Previous],
        ),
        (
            C2f {
                c1: 128,
                c2: 128,
                n: 2,
                shortcut: true,
            },
            vec![Previous],
        ),
        (
            ScDown {
                c1: 128,
                c2: 256,
                k: 3,
                s: 2,
            },
            vec![Previous],
        ),
        (
            C2f {
                c1: 256,
                c2: 256,
                n: 1,
                shortcut: true,
            },
            vec![Previous],
        ),
        (Sppf { c1: 256, c2: 256, k: 5 }, vec![Previous]),
        (Psa { c: 256 }, vec![Previous]),
        (Upsample, vec![Previous]),
        (Concat, vec![Previous, Layer(6)]),
        (
            C2f {
                c1: 384,
                c2: 128,
                n: 1,
                shortcut: false,
            },
            vec![Previous],
        ),
        (Upsample, vec![Previous]),
        (Concat, vec![Previous, Layer(4)]),
        (
            C2f {
                c1: 192,
                c2: 64,
                n: 1,
                shortcut: false,
            },
            vec![Previous],
        ),
        (
            Conv {
                c1: 64,
                c2: 64,
                k: 3,
                s: 2,
            },
            vec![Previous],
        ),
        (Concat, vec![Previous, Layer(13)]),
        (
            C2f {
                c1: 192,
                c2: 128,
                n: 1,
                shortcut: false,
            },
            vec![Previous],
        ),
        (
            ScDown {
                c1: 128,
                c2: 128,
                k: 3,
                s: 2,
            },
            vec![Previous],
        ),
        (Concat, vec![Previous, Layer(10)]),
        (
            C2fCib {
                c1: 384,
                c2: 256,
                n: 1,
                shortcut: true,
                large_kernel: true,
            },
            vec![Previous],
        ),
        (
            Detect {
                nc,
                reg_max,
                channels: vec![64, 128, 256],
            },
            vec![Layer(16), Layer(19), Layer(22)],
        ),
    ];
    rows.into_iter()
        .enumerate()
        .map(|(index, (kind, inputs))| LayerSpec { index, kind, inputs })
        .collect()
}

/// Output `(channels, height, width)` of every layer for a square input of side `size`.
/// The detection layer reports its first level.
pub fn output_shapes(layers: &[LayerSpec], size: usize) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = Vec::with_capacity(layers.len());
    for l in layers {
        let src = l.sources();
        let input = if l.index == 0 { (3, size, size) } else { out[src[0]] };
        let down =
            |(h, w): (usize, usize), k: usize, s: usize| ((h + 2 * (k / 2) - k) / s + 1, (w + 2 * (k / 2) - k) / s + 1);
        let shape = match &l.kind {
            LayerKind::Conv { c2, k, s, .. } | LayerKind::ScDown { c2, k, s, .. } => {
                let (h, w) = down((input.1, input.2), *k, *s);
                (*c2, h, w)
            }
            LayerKind::C2f { c2, .. } | LayerKind::C2fCib { c2, .. } | LayerKind::Sppf { c2, .. } => {
                (*c2, input.1, input.2)
            }
            LayerKind::Psa { c } => (*c, input.1, input.2),
            LayerKind::Upsample => (input.0, input.1 * 2, input.2 * 2),
            LayerKind::Concat => (src.iter().map(|&j| out[j].0).sum(), input.1, input.2),
            LayerKind::Detect { nc, reg_max, .. } => (4 * reg_max + nc, input.1, input.2),
        };
        out.push(shape);
    }
    out
}

/// For each layer, the index of the last layer that reads its output (`None` if unread).
pub fn last_consumers(layers: &[LayerSpec]) -> Vec<Option<usize>> {
    let mut last = vec![None; layers.len()];
    for l in layers {
        for s in l.sources() {
            last[s] = Some(l.index);
        }
    }
    last
}
