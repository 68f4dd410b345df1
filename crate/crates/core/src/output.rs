//! CSV, legacy VTK and plain-text writers for run results.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::adapt::CycleSummary;
use crate::estimator::EstimatorReport;
use crate::qoi::QoiRecord;
use crate::scenarios::ScenarioConfig;
use crate::system::TimeStepState;

pub const QOI_HEADER: &str = "cycle,step,t,displacement,Fx,Fy,Fx_deg,Fy_deg,Eb,Ec,dofs,eta";
pub const CYCLES_HEADER: &str = "cycle,step,t,dofs,cells,eta1,eta2,eta3,eta4,eta,newton_iters";

/// 12 significant digits in scientific notation.
pub fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        // avoid "-0"
        return "0".into();
    }
    format!("{x:.11e}")
}

/// Rows are written sorted by `(cycle, step)`.
pub fn write_qoi_csv(records: &[QoiRecord], out: &mut impl Write) -> io::Result<()> {
    let mut sorted: Vec<&QoiRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.cycle, r.step));
    writeln!(out, "{QOI_HEADER}")?;
    for r in sorted {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.cycle,
            r.step,
            fmt_g(r.t),
            fmt_g(r.displacement),
            fmt_g(r.fx),
            fmt_g(r.fy),
            fmt_g(r.fx_deg),
            fmt_g(r.fy_deg),
            fmt_g(r.eb),
            fmt_g(r.ec),
            r.dofs,
            fmt_g(r.eta)
        )?;
    }
    Ok(())
}

pub fn write_cycles_csv(rows: &[CycleSummary], out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{CYCLES_HEADER}")?;
    for c in rows {
        let [e1, e2, e3, e4] = c.eta_k.map(fmt_g);
        writeln!(
            out,
            "{},{},{},{},{},{e1},{e2},{e3},{e4},{},{}",
            c.cycle,
            c.step,
            fmt_g(c.t),
            c.dofs,
            c.cells,
            fmt_g(c.eta),
            c.newton_iters
        )?;
    }
    Ok(())
}

/// Legacy ASCII unstructured grid with every mesh vertex as a point. Hanging
/// vertices carry interpolated fields, `Lambda = 0`, `eta = 0` and `class = -1`.
pub fn write_vtk(
    state: &TimeStepState,
    report: Option<&EstimatorReport>,
    out: &mut impl Write,
) -> io::Result<()> {
    let space = &state.space;
    let mesh = space.mesh();
    let nv = mesh.vertices().len();
    let cells = mesh.active_cells();

    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "phase-field state t={}", fmt_g(state.t))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {nv} double")?;
    for v in mesh.vertices() {
        writeln!(out, "{} {} 0", v.coords[0], v.coords[1])?;
    }
    writeln!(out, "CELLS {} {}", cells.len(), 5 * cells.len())?;
    for &c in cells {
        let [a, b, d, e] = mesh.cell(c).vertices;
        writeln!(out, "4 {a} {b} {d} {e}")?;
    }
    writeln!(out, "CELL_TYPES {}", cells.len())?;
    for _ in cells {
        writeln!(out, "9")?;
    }

    writeln!(out, "POINT_DATA {nv}")?;
    writeln!(out, "SCALARS phi double 1\nLOOKUP_TABLE default")?;
    for v in 0..nv {
        writeln!(out, "{}", space.vertex_value(&state.phi, v))?;
    }
    writeln!(out, "VECTORS u double")?;
    for v in 0..nv {
        let mut u = [0.0; 2];
        for &(d, w) in space.expansion(v) {
            u[0] += w * state.u[d][0];
            u[1] += w * state.u[d][1];
        }
        writeln!(out, "{} {} 0", u[0], u[1])?;
    }
    let per_dof =
        |f: &dyn Fn(usize) -> String, missing: &str, out: &mut dyn Write| -> io::Result<()> {
            for v in 0..nv {
                match space.dof_of_vertex(v) {
                    Some(d) => writeln!(out, "{}", f(d))?,
                    None => writeln!(out, "{missing}")?,
                }
            }
            Ok(())
        };
    writeln!(out, "SCALARS Lambda double 1\nLOOKUP_TABLE default")?;
    per_dof(&|d| state.lambda[d].to_string(), "0", out)?;
    if let Some(rep) = report {
        writeln!(out, "SCALARS eta double 1\nLOOKUP_TABLE default")?;
        per_dof(&|d| rep.nodes[d].eta_squared().sqrt().to_string(), "0", out)?;
        writeln!(out, "SCALARS class int 1\nLOOKUP_TABLE default")?;
        per_dof(&|d| rep.nodes[d].class.code().to_string(), "-1", out)?;
    }

    writeln!(out, "CELL_DATA {}", cells.len())?;
    if let Some(rep) = report {
        writeln!(out, "SCALARS indicator double 1\nLOOKUP_TABLE default")?;
        for x in &rep.indicators {
            writeln!(out, "{x}")?;
        }
    }
    writeln!(out, "SCALARS level int 1\nLOOKUP_TABLE default")?;
    for &c in cells {
        writeln!(out, "{}", mesh.cell(c).level)?;
    }
    Ok(())
}

/// One line per DoF node: `node x y class alpha_p s_p eta1 eta2 eta3 eta4`.
pub fn write_estimator_dump(
    state: &TimeStepState,
    report: &EstimatorReport,
    out: &mut impl Write,
) -> io::Result<()> {
    writeln!(out, "# node x y class alpha_p s_p eta1 eta2 eta3 eta4")?;
    let mesh = state.space.mesh();
    for (d, n) in report.nodes.iter().enumerate() {
        let [x, y] = mesh.vertex(n.vertex).coords;
        let [e1, e2, e3, e4] = n.eta.map(fmt_g);
        writeln!(
            out,
            "{d} {} {} {} {} {} {e1} {e2} {e3} {e4}",
            fmt_g(x),
            fmt_g(y),
            n.class.code(),
            fmt_g(n.alpha),
            fmt_g(n.s)
        )?;
    }
    Ok(())
}

/// Index of everything a run wrote below its output directory.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub root: PathBuf,
    /// Paths relative to `root`, in creation order.
    pub files: Vec<PathBuf>,
    pub config: String,
    pub realized: Vec<(String, String)>,
    pub status: String,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "manifest.txt";

    pub fn new(root: impl Into<PathBuf>, cfg: &ScenarioConfig, mode: &str) -> Self {
        let realized = vec![
            ("mode".to_string(), mode.to_string()),
            ("h_start".to_string(), fmt_g(cfg.h_start)),
            ("epsilon".to_string(), fmt_g(cfg.epsilon())),
            ("strip".to_string(), fmt_g(cfg.strip())),
            ("theta".to_string(), fmt_g(cfg.theta)),
            ("steps".to_string(), cfg.n_steps().to_string()),
        ];
        RunManifest {
            root: root.into(),
            files: Vec::new(),
            config: cfg.to_config_string(),
            realized,
            status: "running".into(),
        }
    }

    /// Create `rel` under the root (with parent directories) and record it.
    pub fn create(&mut self, rel: impl AsRef<Path>) -> io::Result<io::BufWriter<fs::File>> {
        let rel = rel.as_ref();
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = fs::File::create(&path)?;
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_path_buf());
        }
        Ok(io::BufWriter::new(file))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "status = {}", self.status);
        let _ = writeln!(s, "\n[files]");
        let _ = writeln!(s, "{}", Self::FILE_NAME);
        for f in &self.files {
            let _ = writeln!(s, "{}", f.display());
        }
        let _ = writeln!(s, "\n[realized]");
        for (k, v) in &self.realized {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.config);
        s
    }

    pub fn save(&self) -> io::Result<()> {
        fs::create_dir_all(&self.root)?;
        fs::write(self.root.join(Self::FILE_NAME), self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{EstimatorConfig, EstimatorInput};
    use crate::fespace::ScalarSpace;
    use crate::mesh::Mesh;
    use crate::system::Obstacle;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn record(cycle: usize, step: usize) -> QoiRecord {
        QoiRecord {
            cycle,
            step,
            t: step as f64 * 1e-4,
            displacement: step as f64 * 1e-4,
            fx: 1.5,
            fy: -0.25,
            fx_deg: 1.0,
            fy_deg: 0.0,
            eb: 2.0,
            ec: 0.0,
            dofs: 41,
            eta: 3.0e-3,
        }
    }

    fn state() -> TimeStepState {
        let m = Mesh::coarse("shear").unwrap().uniform_refine(1);
        let m = m.refine(&BTreeSet::from([m.active_cells()[0]]));
        TimeStepState::undamaged(&ScalarSpace::new(Arc::new(m)), 0.0)
    }

    #[test]
    fn number_format() {
        assert_eq!(fmt_g(0.0), "0");
        assert_eq!(fmt_g(-0.0), "0");
        assert_eq!(fmt_g(1e-4), "1.00000000000e-4");
        assert_eq!(fmt_g(-123.456), "-1.23456000000e2");
        assert_eq!(fmt_g(1.0 / 3.0).parse::<f64>().unwrap(), 0.333333333333);
    }

    #[test]
    fn qoi_csv() {
        let mut buf = Vec::new();
        write_qoi_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{QOI_HEADER}\n"));

        let mut buf = Vec::new();
        write_qoi_csv(&[record(2, 1), record(1, 2), record(1, 1)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let keys: Vec<(String, String)> = text
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                assert_eq!(f.len(), 12);
                assert_eq!(f[2], f[3]);
                (f[0].to_string(), f[1].to_string())
            })
            .collect();
        let expected =
            [("1", "1"), ("1", "2"), ("2", "1")].map(|(a, b)| (a.to_string(), b.to_string()));
        assert_eq!(keys, expected);
    }

    #[test]
    fn cycles_csv() {
        let row = CycleSummary {
            cycle: 1,
            step: 7,
            t: 7e-4,
            dofs: 100,
            cells: 90,
            eta_k: [1.0, 0.0, 0.5, 0.0],
            eta: 2.0,
            newton_iters: 33,
        };
        let mut buf = Vec::new();
        write_cycles_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CYCLES_HEADER);
        assert_eq!(
            lines[1],
            "1,7,7.00000000000e-4,100,90,1.00000000000e0,0,5.00000000000e-1,0,2.00000000000e0,33"
        );
    }

    #[test]
    fn vtk_of_undamaged_state() {
        let st = state();
        let obstacle = Obstacle::constant(st.n_dofs(), 1.0);
        let params = ScenarioConfig::preset("shear").unwrap().material();
        let report = EstimatorInput {
            state: &st,
            obstacle: &obstacle,
            params,
            source: None,
        }
        .estimate(&EstimatorConfig::default());
        let mut buf = Vec::new();
        write_vtk(&st, Some(&report), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
        let mesh = st.space.mesh();
        let nv = mesh.vertices().len();
        assert!(text.contains(&format!(
            "CELLS {} {}",
            mesh.n_active(),
            5 * mesh.n_active()
        )));
        assert!(text.contains(&format!("CELL_DATA {}", mesh.n_active())));

        let lines: Vec<&str> = text.lines().collect();
        let block = |name: &str| {
            let at = lines
                .iter()
                .position(|l| l.starts_with(&format!("SCALARS {name} ")))
                .unwrap();
            lines[at + 2..at + 2 + nv].to_vec()
        };
        assert!(block("phi").iter().all(|v| *v == "1"));
        let hanging = (0..nv).filter(|&v| mesh.is_hanging(v)).count();
        assert!(hanging > 0);
        assert_eq!(
            block("class").iter().filter(|v| **v == "-1").count(),
            hanging
        );
    }

    #[test]
    fn estimator_dump_has_a_line_per_dof() {
        let st = state();
        let obstacle = Obstacle::constant(st.n_dofs(), 1.0);
        let params = ScenarioConfig::preset("shear").unwrap().material();
        let report = EstimatorInput {
            state: &st,
            obstacle: &obstacle,
            params,
            source: None,
        }
        .estimate(&EstimatorConfig::default());
        let mut buf = Vec::new();
        write_estimator_dump(&st, &report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), st.n_dofs() + 1);
        assert!(text.lines().skip(1).all(|l| l.split(' ').count() == 10));
    }

    #[test]
    fn manifest_lists_created_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig::preset("tension").unwrap();
        let mut m = RunManifest::new(dir.path(), &cfg, "uniform");
        writeln!(m.create("qoi.csv").unwrap(), "x").unwrap();
        writeln!(m.create("vtk/step_0001_cycle1.vtk").unwrap(), "x").unwrap();
        m.create("qoi.csv").unwrap();
        m.save().unwrap();
        assert!(dir.path().join("vtk/step_0001_cycle1.vtk").exists());
        let text = fs::read_to_string(dir.path().join(RunManifest::FILE_NAME)).unwrap();
        assert!(text.contains("\nqoi.csv\nvtk/step_0001_cycle1.vtk\n"));
        assert!(text.contains("scenario = tension"));
        assert!(text.contains("h_start = 3.90625000000e-2"));
        assert_eq!(m.files.len(), 2);
    }
}
