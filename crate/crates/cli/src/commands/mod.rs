mod bounds;
mod build;
mod coefficients;
mod verify;

use std::path::{Path, PathBuf};

use parametrix_core::coefficients::CoefficientField;
use parametrix_core::grid::digest;
use parametrix_core::report::Report;
use parametrix_core::KernelGrid;

use crate::error::CliError;
use crate::manifest::{Command, RunManifest};

pub struct Ctx {
    pub manifest: RunManifest,
    pub field: CoefficientField,
    pub out: PathBuf,
    pub base_dir: PathBuf,
    pub force: bool,
}

impl Ctx {
    pub fn digest(&self) -> String {
        digest(&self.manifest.to_toml())
    }

    pub fn write_report(&self, name: &str, report: &Report) -> Result<(), CliError> {
        let mut full = Report::new();
        full.set("command_digest", self.digest()).set("seed", self.manifest.seed);
        full.extend(report);
        full.write(&self.out.join(name))?;
        Ok(())
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        std::fs::write(self.out.join(name), text)?;
        Ok(())
    }

    pub fn write_kernel(&self, name: &str, kernel: &mut KernelGrid) -> Result<(), CliError> {
        kernel.config_digest = self.digest();
        kernel.to_csv(&self.out.join(name))?;
        Ok(())
    }

    /// Relative paths are looked up next to the manifest, then in the output
    /// directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            return path.to_path_buf();
        }
        let beside = self.base_dir.join(path);
        if beside.exists() {
            beside
        } else {
            self.out.join(path)
        }
    }

    pub fn load_kernel(&self, path: &Path) -> Result<KernelGrid, CliError> {
        let p = self.resolve(path);
        if !p.exists() {
            return Err(CliError::Io(format!("missing input {}", p.display())));
        }
        Ok(KernelGrid::from_csv(&p)?)
    }
}

pub fn run(cmd: Command, ctx: &Ctx) -> Result<String, CliError> {
    match cmd {
        Command::Dmo => coefficients::dmo(ctx),
        Command::Freeze => coefficients::freeze(ctx),
        Command::Phi => coefficients::phi(ctx),
        Command::Build => build::run(ctx),
        Command::Verify => verify::run(ctx),
        Command::Bounds => bounds::bounds(ctx),
        Command::Chain => bounds::chain(ctx),
    }
}

/// `{:.16e}` CSV rows under a header.
pub fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}
