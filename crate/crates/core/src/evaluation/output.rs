use std::io::{self, Write};

use super::{Comparison, Histogram, SweepResult};

/// Comment lines carried by every CSV output.
pub fn csv_header(config_digest: &str, seed: u64) -> Vec<String> {
    vec![format!("config_digest={config_digest}"), format!("seed={seed}")]
}

fn header<W: Write>(w: &mut W, lines: &[String]) -> io::Result<()> {
    for l in lines {
        writeln!(w, "# {l}")?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into())
}

/// One row per (epsilon, episode).
pub fn write_sweep_csv<W: Write>(mut w: W, lines: &[String], sweep: &SweepResult) -> io::Result<()> {
    header(&mut w, lines)?;
    writeln!(
        w,
        "epsilon,episode,env_seed,reward,casualties_blue,casualties_red,health_blue_pct,health_red_pct,partial_win,length,flips,relative_reward"
    )?;
    for c in &sweep.cells {
        for (i, e) in c.episodes.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                c.epsilon,
                i,
                e.env_seed,
                e.cumulative_reward,
                e.blue.casualties,
                e.red.casualties,
                e.blue.total_pct,
                e.red.total_pct,
                e.partial_win as u8,
                e.length,
                e.flips(),
                opt(c.relative_reward)
            )?;
        }
    }
    Ok(())
}

/// One row per group decision: benign and subverted actions plus the size
/// of the perturbation that produced the latter.
pub fn write_actions_csv<W: Write>(mut w: W, lines: &[String], sweep: &SweepResult) -> io::Result<()> {
    header(&mut w, lines)?;
    writeln!(
        w,
        "epsilon,episode,t,group,benign,subverted,benign_argmax,subverted_argmax,screen_linf,nonspatial_linf"
    )?;
    for c in &sweep.cells {
        for (i, e) in c.episodes.iter().enumerate() {
            for (t, s) in e.steps.iter().enumerate() {
                for d in &s.decisions {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{},{},{}",
                        c.epsilon,
                        i,
                        t,
                        d.group,
                        d.benign,
                        d.subverted,
                        d.benign_argmax,
                        d.subverted_argmax,
                        d.screen_linf,
                        d.nonspatial_linf
                    )?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_probe_csv<W: Write>(mut w: W, lines: &[String], h: &Histogram) -> io::Result<()> {
    header(&mut w, lines)?;
    writeln!(w, "bin_lo,bin_hi,freq")?;
    for (i, f) in h.freq.iter().enumerate() {
        writeln!(w, "{},{},{}", h.edges[i], h.edges[i + 1], f)?;
    }
    Ok(())
}

/// One row per (agent, epsilon) with the agent's probe summary repeated.
pub fn write_comparison_csv<W: Write>(mut w: W, lines: &[String], c: &Comparison) -> io::Result<()> {
    header(&mut w, lines)?;
    writeln!(
        w,
        "agent,epsilon,mean_reward,relative_reward,probe_low_loss_mass,probe_mean_loss"
    )?;
    for a in &c.agents {
        for (k, eps) in c.eps_list.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                a.name,
                eps,
                a.mean_reward[k],
                opt(a.relative_reward[k]),
                a.probe.low_loss_mass,
                a.probe.mean_loss
            )?;
        }
    }
    Ok(())
}
