//! Canonical identity of molecules and reactant multisets.
//!
//! Matching goes through the [`Canonicalizer`] trait. The built-in
//! implementation is the default; [`CommandCanonicalizer`] delegates to an
//! external process (for example `scripts/rdkit_canon.py`) over a line
//! protocol: `"<0|1>\t<smiles>\n"` in, canonical SMILES or `!<error>` out.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use super::molecule::Molecule;
use super::smiles::parse_smiles;
use super::writer::canonical_smiles;
use crate::error::{Result, TrexError};

pub trait Canonicalizer: Send + Sync {
    /// Canonical SMILES with atom maps removed; stereo kept only if `stereo`.
    fn canonicalize(&self, smiles: &str, stereo: bool) -> Result<String>;

    fn name(&self) -> &str;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct BuiltinCanonicalizer;

impl Canonicalizer for BuiltinCanonicalizer {
    fn canonicalize(&self, smiles: &str, stereo: bool) -> Result<String> {
        Ok(canonical_molecule(&parse_smiles(smiles)?, stereo))
    }

    fn name(&self) -> &str {
        "builtin"
    }
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Long-lived external canonicalizer process.
pub struct CommandCanonicalizer {
    command: String,
    pipe: Mutex<Pipe>,
}

impl CommandCanonicalizer {
    /// Spawns `command` (split on whitespace into program and arguments).
    pub fn spawn(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| TrexError::Canonicalizer("empty canonicalizer command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| TrexError::Canonicalizer(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(CommandCanonicalizer {
            command: command.to_string(),
            pipe: Mutex::new(Pipe { child, stdin, stdout }),
        })
    }
}

impl Canonicalizer for CommandCanonicalizer {
    fn canonicalize(&self, smiles: &str, stereo: bool) -> Result<String> {
        if smiles.contains(['\n', '\t']) {
            return Err(TrexError::smiles(smiles, 0, "control character in SMILES"));
        }
        let mut pipe = self.pipe.lock().unwrap_or_else(|p| p.into_inner());
        let io_err = |e: std::io::Error| TrexError::Canonicalizer(format!("{}: {e}", self.command));
        writeln!(pipe.stdin, "{}\t{}", u8::from(stereo), smiles).map_err(io_err)?;
        pipe.stdin.flush().map_err(io_err)?;
        let mut line = String::new();
        if pipe.stdout.read_line(&mut line).map_err(io_err)? == 0 {
            return Err(TrexError::Canonicalizer(format!("{} exited", self.command)));
        }
        let line = line.trim_end();
        match line.strip_prefix('!') {
            Some(reason) => Err(TrexError::smiles(smiles, 0, reason)),
            None => Ok(line.to_string()),
        }
    }

    fn name(&self) -> &str {
        &self.command
    }
}

impl Drop for CommandCanonicalizer {
    fn drop(&mut self) {
        if let Ok(p) = self.pipe.get_mut() {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

/// Uses `TREX_CANONICALIZER` (a command line) when set, otherwise the built-in.
pub fn canonicalizer_from_env() -> Result<Arc<dyn Canonicalizer>> {
    match std::env::var("TREX_CANONICALIZER") {
        Ok(cmd) if !cmd.trim().is_empty() => Ok(Arc::new(CommandCanonicalizer::spawn(&cmd)?)),
        _ => Ok(Arc::new(BuiltinCanonicalizer)),
    }
}

pub fn canonical_molecule(mol: &Molecule, stereo: bool) -> String {
    let mut m = mol.clone();
    m.strip_maps();
    if !stereo {
        m.strip_stereo();
    }
    m.normalize_hydrogens();
    canonical_smiles(&m, false)
}

/// Built-in canonical form of a SMILES string.
pub fn canonical_form(smiles: &str, stereo: bool) -> Result<String> {
    BuiltinCanonicalizer.canonicalize(smiles, stereo)
}

/// Order-free key for a reactant multiset.
pub fn reactant_set_key<S: AsRef<str>>(canon: &dyn Canonicalizer, reactants: &[S], stereo: bool) -> Result<String> {
    let mut parts = Vec::with_capacity(reactants.len());
    for r in reactants {
        for frag in canon.canonicalize(r.as_ref(), stereo)?.split('.') {
            parts.push(frag.to_string());
        }
    }
    parts.sort();
    Ok(parts.join("."))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atom_order_does_not_matter() {
        assert_eq!(canonical_form("OCC", false).unwrap(), canonical_form("CCO", false).unwrap());
        assert_eq!(
            canonical_form("c1ccccc1O", false).unwrap(),
            canonical_form("Oc1ccccc1", false).unwrap()
        );
    }

    #[test]
    fn stereo_regimes() {
        let t = "F/C=C/F";
        let c = "F/C=C\\F";
        assert_eq!(canonical_form(t, false).unwrap(), canonical_form(c, false).unwrap());
        assert_ne!(canonical_form(t, true).unwrap(), canonical_form(c, true).unwrap());
        assert_eq!(canonical_form(t, true).unwrap(), canonical_form("F\\C=C\\F", true).unwrap());
    }

    #[test]
    fn maps_are_ignored() {
        assert_eq!(canonical_form("[CH3:1][OH:2]", false).unwrap(), canonical_form("CO", false).unwrap());
    }

    #[test]
    fn malformed_is_an_error() {
        assert!(canonical_form("C(", false).is_err());
    }

    #[test]
    fn multiset_key_ignores_order() {
        let c = BuiltinCanonicalizer;
        let a = reactant_set_key(&c, &["BrCc1ccccc1", "Oc1ccc(O)c(Br)c1"], false).unwrap();
        let b = reactant_set_key(&c, &["Oc1ccc(O)c(Br)c1", "c1ccc(CBr)cc1"], false).unwrap();
        assert_eq!(a, b);
        let joined = reactant_set_key(&c, &["Oc1ccc(O)c(Br)c1.BrCc1ccccc1"], false).unwrap();
        assert_eq!(a, joined);
    }

    #[test]
    fn missing_command_reports_error() {
        assert!(CommandCanonicalizer::spawn("/nonexistent/canonicalizer").is_err());
    }
}
