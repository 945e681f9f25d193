use std::fmt;

use crate::config::ModelConfig;
use crate::nn::Module;

/// Parameter totals per top-level module, in network order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub generator: Vec<(String, usize)>,
    pub discriminator: Vec<(String, usize)>,
}

impl ParamBreakdown {
    pub fn generator_total(&self) -> usize {
        self.generator.iter().map(|(_, n)| n).sum()
    }

    pub fn discriminator_total(&self) -> usize {
        self.discriminator.iter().map(|(_, n)| n).sum()
    }

    pub fn total(&self) -> usize {
        self.generator_total() + self.discriminator_total()
    }

    /// Group a built network's parameters by the first two components of their names.
    pub fn group<M: Module>(net: &M) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        net.visit_params(&mut |p| {
            let key: String = p.name().split('.').take(2).collect::<Vec<_>>().join(".");
            match out.last_mut() {
                Some((k, n)) if *k == key => *n += p.numel(),
                _ => out.push((key, p.numel())),
            }
        });
        out
    }
}

impl fmt::Display for ParamBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, n) in self.generator.iter().chain(&self.discriminator) {
            writeln!(f, "{name:<20} {n:>10}")?;
        }
        writeln!(f, "{:<20} {:>10}", "generator", self.generator_total())?;
        writeln!(f, "{:<20} {:>10}", "discriminator", self.discriminator_total())?;
        write!(f, "{:<20} {:>10}", "total", self.total())
    }
}

/// Sum of parameter lengths of a built network.
pub fn count_parameters<M: Module>(net: &M) -> usize {
    net.num_parameters()
}

// Layers touching a zero-width feature map carry no parameters, so a configuration that
// scales every width to zero counts as an empty network.
fn conv(i: usize, o: usize, kh: usize, kw: usize) -> usize {
    if i == 0 || o == 0 {
        0
    } else {
        i * o * kh * kw + o
    }
}

fn cam(c: usize) -> usize {
    usize::from(c > 0)
}

fn pam(c: usize) -> usize {
    if c == 0 {
        0
    } else {
        1 + 3 * (conv(c, c, 1, 1) + 2 * c)
    }
}

fn fcm(c: usize) -> usize {
    conv(c, c, 3, 1) + conv(c, c, 1, 3) + cam(c)
}

/// Parameter counts derived from the configuration alone, without building the networks.
pub fn count_parameters_for_config(config: &ModelConfig) -> ParamBreakdown {
    let w = config.widths();
    let up = |i: usize, o: usize| conv(i, o, 3, 3) + pam(o) + 2 * fcm(o);
    let generator = vec![
        ("gen.multiscale", 4 * (conv(3, w.base, 3, 3) + cam(w.base))),
        ("gen.down1", conv(w.base, w.down1, 3, 3) + pam(w.down1)),
        ("gen.down2", conv(w.down1, w.stage1, 3, 3) + pam(w.stage1)),
        ("gen.fcm_stage1", config.n_fcm_stage1 * fcm(w.stage1)),
        ("gen.down3", conv(w.stage1, w.stage2, 3, 3) + pam(w.stage2)),
        ("gen.fcm_stage2", config.n_fcm_stage2 * fcm(w.stage2)),
        (
            "gen.bottleneck",
            conv(w.stage2, w.stage2, 3, 1) + conv(w.stage2, w.stage2, 1, 3) + cam(w.stage2) + pam(w.stage2),
        ),
        ("gen.up1", up(w.stage2, w.stage2)),
        ("gen.up2", up(w.stage2, w.base)),
        ("gen.head", conv(w.base, 1, 3, 3)),
    ];
    let [d1, d2, d3] = w.disc;
    let discriminator = vec![
        ("disc.layer1", conv(4, d1, 4, 4)),
        ("disc.layer2", conv(d1, d2, 4, 4)),
        ("disc.pam", pam(d2)),
        ("disc.layer3", conv(d2, d3, 4, 4)),
        ("disc.cam", cam(d3)),
        ("disc.layer4", conv(d3, 1, 4, 4)),
    ];
    let own = |v: Vec<(&str, usize)>| v.into_iter().map(|(k, n)| (k.to_string(), n)).collect();
    ParamBreakdown {
        generator: own(generator),
        discriminator: own(discriminator),
    }
}
