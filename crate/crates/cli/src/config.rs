//! `--config` TSV overrides: `flag TAB value` lines merged into argv for
//! every flag not given explicitly.

use std::ffi::OsString;
use std::path::PathBuf;

use abbrev_core::Error;

/// Returns argv with config entries appended. Explicit flags win.
pub fn apply_config(args: Vec<OsString>) -> Result<Vec<OsString>, Error> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|source| Error::File {
        path: path.clone(),
        source,
    })?;
    let mut out = args;
    let explicit: Vec<String> = out
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("{}: expected flag TAB value", path.display()),
        })?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("{}: invalid flag {key:?}", path.display()),
            });
        }
        let flag = format!("--{key}");
        let given = explicit
            .iter()
            .any(|a| a == &flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        match value.trim() {
            "true" => out.push(flag.into()),
            "false" => {}
            v => {
                out.push(flag.into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut iter = args.iter();
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return iter.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &[&str]) -> Vec<OsString> {
        s.iter().map(OsString::from).collect()
    }

    #[test]
    fn explicit_flags_win_and_booleans_expand() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.tsv");
        std::fs::write(
            &cfg,
            "# defaults\nseed\t7\nhidden\t8\nmajority\ttrue\nverbose\tfalse\n",
        )
        .unwrap();
        let cfg = cfg.to_string_lossy().into_owned();
        let out = apply_config(argv(&["abbrev", "train", "--config", &cfg, "--seed=3"])).unwrap();
        assert_eq!(
            out,
            argv(&[
                "abbrev",
                "train",
                "--config",
                &cfg,
                "--seed=3",
                "--hidden",
                "8",
                "--majority"
            ])
        );
    }

    #[test]
    fn missing_config_names_path() {
        let err = apply_config(argv(&["abbrev", "--config", "/no/such.tsv"])).unwrap_err();
        assert!(err.to_string().contains("/no/such.tsv"));
    }

    #[test]
    fn no_config_is_identity() {
        let a = argv(&["abbrev", "stats", "--dataset", "d.tsv"]);
        assert_eq!(apply_config(a.clone()).unwrap(), a);
    }
}
