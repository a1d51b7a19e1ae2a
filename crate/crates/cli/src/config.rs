//! Layered experiment configuration.
//!
//! A command's settings come from, lowest precedence first: built-in
//! defaults, the `--config` TOML file, `RPDML_OUT_DIR` (output directory
//! only), and command-line flags. Layers are merged as TOML tables and the
//! result is deserialized into the command's config type, so a snapshot of a
//! resolved config can be passed back through `--config` unchanged.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::CliError;

pub const OUT_DIR_ENV: &str = "RPDML_OUT_DIR";

pub fn load_table(path: &Path) -> Result<Table, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<Table>().map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

/// Recursively overwrite `base` with `top`; nested tables are merged key by key.
pub fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Merge the layers and deserialize. Flags set to `None` are absent from
/// the serialized table and therefore do not override anything.
pub fn resolve<T: DeserializeOwned>(
    file: Option<&Path>,
    env_out_dir: Option<PathBuf>,
    flags: &impl Serialize,
) -> Result<T, CliError> {
    let mut table = match file {
        Some(p) => load_table(p)?,
        None => Table::new(),
    };
    if let Some(dir) = env_out_dir {
        table.insert("out_dir".into(), Value::String(dir.to_string_lossy().into_owned()));
    }
    let flags = Table::try_from(flags).map_err(|e| CliError::Usage(format!("cannot encode flags: {e}")))?;
    merge(&mut table, flags);
    table.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("invalid configuration: {}", e.message())))
}

pub fn env_out_dir() -> Option<PathBuf> {
    std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// The resolved config as it is stored next to the run's outputs.
pub fn snapshot<T: Serialize>(command: &str, config: &T) -> Result<String, CliError> {
    let body = toml::to_string(config).map_err(|e| CliError::Usage(format!("cannot encode config: {e}")))?;
    Ok(format!("# resolved configuration of `rpdml {command}`\n{body}"))
}

pub fn require_file(what: &str, path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Cfg {
        seed: u64,
        #[serde(default = "default_out")]
        out_dir: PathBuf,
        #[serde(default)]
        inner: Inner,
    }

    #[derive(Debug, Default, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        a: f64,
        b: usize,
    }

    fn default_out() -> PathBuf {
        "runs/x".into()
    }

    #[derive(Serialize)]
    struct Flags {
        seed: Option<u64>,
        out_dir: Option<PathBuf>,
        inner: InnerFlags,
    }

    #[derive(Serialize)]
    struct InnerFlags {
        a: Option<f64>,
        b: Option<usize>,
    }

    fn flags(seed: Option<u64>, out: Option<&str>, a: Option<f64>) -> Flags {
        Flags { seed, out_dir: out.map(PathBuf::from), inner: InnerFlags { a, b: None } }
    }

    fn file(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn precedence_is_flag_env_file_default() {
        let f = file("seed = 1\nout_dir = \"from-file\"\n[inner]\na = 2\nb = 3\n");
        let c: Cfg = resolve(Some(f.path()), None, &flags(None, None, None)).unwrap();
        assert_eq!(c, Cfg { seed: 1, out_dir: "from-file".into(), inner: Inner { a: 2.0, b: 3 } });

        let c: Cfg = resolve(Some(f.path()), Some("from-env".into()), &flags(Some(9), None, Some(0.5))).unwrap();
        assert_eq!(c, Cfg { seed: 9, out_dir: "from-env".into(), inner: Inner { a: 0.5, b: 3 } });

        let c: Cfg = resolve(Some(f.path()), Some("from-env".into()), &flags(None, Some("from-flag"), None)).unwrap();
        assert_eq!(c.out_dir, PathBuf::from("from-flag"));

        let c: Cfg = resolve(None, None, &flags(Some(4), None, None)).unwrap();
        assert_eq!(c.out_dir, PathBuf::from("runs/x"));
    }

    #[test]
    fn missing_seed_and_unknown_keys_are_usage_errors() {
        let e = resolve::<Cfg>(None, None, &flags(None, None, None)).unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
        let f = file("seed = 1\nbogus = true\n");
        assert!(matches!(resolve::<Cfg>(Some(f.path()), None, &flags(None, None, None)), Err(CliError::Usage(_))));
    }
}
