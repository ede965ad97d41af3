//! `--config FILE` expansion: each `key=value` line becomes `--key value`,
//! inserted right after the subcommand so that flags given on the command
//! line, which come later, override it.

use std::ffi::OsString;
use std::path::Path;

use clap::CommandFactory;

use crate::args::Cli;
use crate::output::UsageError;

fn find_config(args: &[OsString]) -> Result<Option<(usize, usize, OsString)>, UsageError> {
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            let v = args
                .get(i + 1)
                .ok_or_else(|| UsageError("--config needs a file".into()))?;
            return Ok(Some((i, 2, v.clone())));
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Ok(Some((i, 1, v.into())));
        }
    }
    Ok(None)
}

pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, UsageError> {
    // subcommand is the first bare word after the program name
    let Some(sub_at) = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 1)
    else {
        return Ok(args);
    };
    let Some((at, width, file)) = find_config(&args[sub_at..])? else {
        return Ok(args);
    };
    let sub_name = args[sub_at].to_string_lossy().into_owned();
    let root = Cli::command();
    let Some(sub) = root.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let pairs = read_pairs(Path::new(&file))?;

    let mut inserted = Vec::new();
    for (line, key, value) in pairs {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| {
                UsageError(format!("{}:{line}: unknown key {key:?} for {sub_name}", Path::new(&file).display()))
            })?;
        if arg.get_action().takes_values() {
            inserted.push(OsString::from(format!("--{key}")));
            inserted.push(OsString::from(value));
        } else {
            match value.as_str() {
                "true" => inserted.push(OsString::from(format!("--{key}"))),
                "false" => {}
                _ => {
                    return Err(UsageError(format!(
                        "{}:{line}: {key} expects true or false",
                        Path::new(&file).display()
                    )))
                }
            }
        }
    }
    let mut out = args[..=sub_at].to_vec();
    out.extend(inserted);
    let rest = &args[sub_at + 1..];
    // drop the --config flag itself; its content is already spliced in
    let at = at - 1;
    out.extend(rest[..at].iter().cloned());
    out.extend(rest[at + width..].iter().cloned());
    Ok(out)
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, String, String)>, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}
