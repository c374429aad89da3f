//! `--config` files: `key = value` lines naming long flags of the active
//! subcommand. They are spliced into the argument list right after the
//! subcommand, skipping any flag already given on the command line.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command};
use deepspace::kv;

pub fn apply(cmd: &Command, argv: Vec<OsString>, matches: &ArgMatches, path: &Path) -> Result<Vec<OsString>> {
    let (name, sub_matches) = matches.subcommand().context("no subcommand given")?;
    let sub = cmd.find_subcommand(name).expect("parsed subcommand exists");
    let entries = kv::read(path)?;

    let mut extra = Vec::new();
    for e in entries {
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments().filter(|a| a.is_global_set()))
            .find(|a| a.get_long() == Some(e.key.as_str()) && e.key != "config" && e.key != "help");
        let Some(arg) = arg else {
            bail!("{}:{}: unknown key {:?} for `{name}`", path.display(), e.line, e.key);
        };
        let id = arg.get_id().as_str();
        let given = |m: &ArgMatches| matches!(m.try_contains_id(id), Ok(true)) && m.value_source(id) == Some(ValueSource::CommandLine);
        if given(sub_matches) || given(matches) {
            continue;
        }
        let flag = format!("--{}", e.key);
        match arg.get_action() {
            ArgAction::SetTrue => {
                let on: bool = e
                    .value
                    .parse()
                    .with_context(|| format!("{}:{}: expected true or false", path.display(), e.line))?;
                if on {
                    extra.push(OsString::from(flag));
                }
            }
            _ => {
                extra.push(OsString::from(flag));
                extra.push(OsString::from(e.value));
            }
        }
    }

    let pos = subcommand_position(cmd, &argv, name);
    let mut out: Vec<OsString> = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

/// Index of the subcommand token, stepping over global flags and their values.
fn subcommand_position(cmd: &Command, argv: &[OsString], name: &str) -> usize {
    let mut i = 1;
    while i < argv.len() {
        let tok = argv[i].to_string_lossy();
        if tok == name {
            return i;
        }
        let takes_value = tok
            .strip_prefix("--")
            .filter(|t| !t.contains('='))
            .and_then(|t| cmd.get_arguments().find(|a| a.get_long() == Some(t)))
            .is_some_and(|a| a.get_action().takes_values());
        i += if takes_value { 2 } else { 1 };
    }
    unreachable!("subcommand {name} was parsed from argv")
}
