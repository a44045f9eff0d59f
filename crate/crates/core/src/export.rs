//! Result bundles: CSV tables, time series and raster snapshots.
//!
//! Every file opens with a `# config_hash=<sha256>` comment line. Numbers are
//! written with Rust's shortest round-trip formatting, so parsing a file back
//! recovers the exact `f64` values and output never depends on locale.
//! Raster files use gnuplot's `x y value` layout with a blank line between
//! scanlines.

use crate::bench::{ConvergenceReport, Snapshot, StrategyRun, StrategyTable};
use crate::config::ScenarioConfig;
use crate::fleet::FleetDynamics;
use crate::sweep::Solution;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Writes a deterministic set of files into one directory.
#[derive(Debug)]
pub struct ResultWriter {
    dir: PathBuf,
    hash: String,
    written: Vec<PathBuf>,
}

fn num(x: f64) -> String {
    format!("{x}")
}

impl ResultWriter {
    /// Create `dir` if needed and write the config echo `config.toml`.
    pub fn create(dir: &Path, cfg: &ScenarioConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = Self {
            dir: dir.to_path_buf(),
            hash: cfg.hash(),
            written: Vec::new(),
        };
        let echo = format!("# config_hash={}\n{}", w.hash, cfg.to_toml_string());
        w.write_raw("config.toml", &echo)?;
        Ok(w)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.written
    }

    fn write_raw(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Header line plus rows of preformatted cells.
    pub fn write_csv<I>(&mut self, name: &str, header: &[String], rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut body = format!("# config_hash={}\n{}\n", self.hash, header.join(","));
        for row in rows {
            body.push_str(&row.join(","));
            body.push('\n');
        }
        self.write_raw(name, &body)
    }

    pub fn write_table(&mut self, table: &StrategyTable) -> Result<PathBuf> {
        let header = [
            "strategy",
            "pde_cost",
            "mobility_cost",
            "total",
            "normalized_percent",
        ]
        .map(String::from);
        let rows = table.rows.iter().map(|r| {
            vec![
                r.strategy.name().to_string(),
                num(r.pde_cost),
                num(r.mobility_cost),
                num(r.total),
                num(r.normalized_percent),
            ]
        });
        self.write_csv("table.csv", &header, rows)
    }

    /// `t` followed by `‖Z(t)‖` for each run.
    pub fn write_norms(&mut self, runs: &[StrategyRun]) -> Result<PathBuf> {
        let Some(first) = runs.first() else {
            return Err(Error::invalid("runs", "nothing to export"));
        };
        let grid = *first.sim.grid();
        let norms: Vec<Vec<f64>> = runs.iter().map(|r| r.sim.norm_history()).collect();
        let mut header = vec!["t".to_string()];
        header.extend(runs.iter().map(|r| r.strategy.name().to_string()));
        let rows = (0..grid.nodes()).map(|k| {
            let mut row = vec![num(grid.time(k))];
            row.extend(norms.iter().map(|n| num(n[k])));
            row
        });
        self.write_csv("norms.csv", &header, rows)
    }

    /// Guidance, trajectory, open-loop control and objective history of an
    /// optimized solution.
    pub fn write_solution(&mut self, sol: &Solution, fleet: &FleetDynamics) -> Result<()> {
        let grid = *sol.guidance.grid();
        let m = fleet.count();

        let mut header = vec!["t".to_string()];
        for i in 1..=m {
            header.push(format!("x{i}"));
            header.push(format!("y{i}"));
        }
        let rows = (0..grid.nodes()).map(|k| {
            let mut row = vec![num(grid.time(k))];
            for [x, y] in fleet.positions(&sol.trajectory.state(k)) {
                row.push(num(x));
                row.push(num(y));
            }
            row
        });
        self.write_csv("trajectory.csv", &header, rows)?;

        let dim = sol.guidance.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=dim).map(|c| format!("p{c}")));
        let rows = (0..grid.nodes()).map(|k| {
            let mut row = vec![num(grid.time(k))];
            row.extend(sol.guidance.at_node(k).iter().map(|&v| num(v)));
            row
        });
        self.write_csv("guidance.csv", &header, rows)?;

        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("u{i}")));
        let rows = (0..grid.nodes()).map(|k| {
            let mut row = vec![num(grid.time(k))];
            row.extend(sol.control.sample(2 * k).iter().map(|&v| num(v)));
            row
        });
        self.write_csv("control.csv", &header, rows)?;

        let header = ["iteration", "objective"].map(String::from);
        let rows = sol
            .cost_history
            .iter()
            .enumerate()
            .map(|(i, &j)| vec![i.to_string(), num(j)]);
        self.write_csv("cost_history.csv", &header, rows)?;
        Ok(())
    }

    /// Applied control of a simulated run, `t, u1, …`.
    pub fn write_run_control(&mut self, name: &str, run: &StrategyRun) -> Result<PathBuf> {
        let grid = *run.sim.grid();
        let m = run.sim.control_at_node(0).len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("u{i}")));
        let rows = (0..grid.nodes()).map(|k| {
            let mut row = vec![num(grid.time(k))];
            row.extend(run.sim.control_at_node(k).iter().map(|&v| num(v)));
            row
        });
        self.write_csv(name, &header, rows)
    }

    pub fn write_convergence(&mut self, report: &ConvergenceReport) -> Result<PathBuf> {
        let header = [
            "modes",
            "objective",
            "pde_cost",
            "mobility_cost",
            "iterations",
            "converged",
            "normalized_percent",
        ]
        .map(String::from);
        let rows = report.rows.iter().map(|r| {
            vec![
                r.modes.to_string(),
                num(r.objective),
                num(r.pde_cost),
                num(r.mobility_cost),
                r.iterations.to_string(),
                r.converged.to_string(),
                num(r.normalized_percent),
            ]
        });
        self.write_csv("convergence.csv", &header, rows)
    }

    /// One raster file per snapshot, `<prefix>_t<time>.dat`.
    pub fn write_snapshots(&mut self, prefix: &str, snaps: &[Snapshot]) -> Result<Vec<PathBuf>> {
        snaps
            .iter()
            .map(|s| {
                let r = s.values.nrows();
                let h = 1.0 / (r - 1) as f64;
                let mut body = format!(
                    "# config_hash={}\n# t={} node={}\n# x y z\n",
                    self.hash,
                    num(s.time),
                    s.node
                );
                for a in 0..r {
                    for b in 0..s.values.ncols() {
                        let _ = writeln!(
                            body,
                            "{} {} {}",
                            num(a as f64 * h),
                            num(b as f64 * h),
                            num(s.values[(a, b)])
                        );
                    }
                    body.push('\n');
                }
                self.write_raw(&format!("{prefix}_t{}.dat", num(s.time)), &body)
            })
            .collect()
    }

    /// Free-form `key = value` lines; the only file that may differ between
    /// identical runs (wall times).
    pub fn write_metadata(&mut self, entries: &[(&str, String)]) -> Result<PathBuf> {
        let mut body = format!("# config_hash={}\n", self.hash);
        for (k, v) in entries {
            let _ = writeln!(body, "{k} = {v}");
        }
        self.write_raw("metadata.txt", &body)
    }
}
