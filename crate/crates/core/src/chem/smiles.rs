//! SMILES reader.
//!
//! Covers the organic subset, bracket atoms (isotope, chirality, hydrogens,
//! charge, atom class), ring closures including `%nn`, branches, dot
//! disconnections and `/` `\` double-bond markers. Extended chirality classes
//! (`@TH`, `@AL`, ...) are accepted and ignored.

use std::collections::HashMap;

use super::aromaticity::perceive_aromaticity;
use super::element::Element;
use super::molecule::{Atom, BondOrder, DbStereo, Molecule, Tetra};
use crate::error::{Result, TrexError};

#[derive(Debug, Clone, Copy, PartialEq)]
enum BondSym {
    Order(BondOrder),
    /// `/` (true) or `\` (false); a single bond carrying a direction.
    Dir(bool),
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Atom(usize),
    H,
    /// Lone pair or implicit hydrogen of a stereocentre without bracket H.
    Implicit,
    Pending(u32),
}

struct RingOpen {
    atom: usize,
    sym: Option<BondSym>,
    token: u32,
}

struct DirMark {
    first: usize,
    second: usize,
    slash: bool,
}

/// Parses a SMILES string, perceives aromaticity of Kekulé rings and drops
/// explicit hydrogen counts the default valence model reproduces.
pub fn parse_smiles(smiles: &str) -> Result<Molecule> {
    let mut mol = Parser::new(smiles).run()?;
    perceive_aromaticity(&mut mol);
    mol.normalize_hydrogens();
    Ok(mol)
}

struct Parser<'a> {
    src: &'a str,
    s: &'a [u8],
    pos: usize,
    mol: Molecule,
    prev: Option<usize>,
    branches: Vec<Option<usize>>,
    pending: Option<BondSym>,
    rings: HashMap<u32, RingOpen>,
    order: Vec<Vec<Slot>>,
    chiral: Vec<Option<bool>>,
    marks: HashMap<usize, Vec<DirMark>>,
    next_token: u32,
    chiral_pending: Option<bool>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            s: src.as_bytes(),
            pos: 0,
            mol: Molecule::new(),
            prev: None,
            branches: Vec::new(),
            pending: None,
            rings: HashMap::new(),
            order: Vec::new(),
            chiral: Vec::new(),
            marks: HashMap::new(),
            next_token: 0,
            chiral_pending: None,
        }
    }

    fn err(&self, reason: impl Into<String>) -> TrexError {
        TrexError::smiles(self.src, self.pos, reason)
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn run(mut self) -> Result<Molecule> {
        if self.s.is_empty() {
            return Err(self.err("empty string"));
        }
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    if self.prev.is_none() {
                        return Err(self.err("branch without preceding atom"));
                    }
                    self.branches.push(self.prev);
                    self.pos += 1;
                }
                b')' => {
                    self.prev = self.branches.pop().ok_or_else(|| self.err("unmatched ')'"))?;
                    if self.pending.is_some() {
                        return Err(self.err("bond symbol before ')'"));
                    }
                    self.pos += 1;
                }
                b'.' => {
                    if self.pending.is_some() {
                        return Err(self.err("bond symbol before '.'"));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b'$' | b':' | b'/' | b'\\' => {
                    if self.pending.is_some() {
                        return Err(self.err("consecutive bond symbols"));
                    }
                    self.pending = Some(match c {
                        b'-' => BondSym::Order(BondOrder::Single),
                        b'=' => BondSym::Order(BondOrder::Double),
                        b'#' => BondSym::Order(BondOrder::Triple),
                        b':' => BondSym::Order(BondOrder::Aromatic),
                        b'/' => BondSym::Dir(true),
                        b'\\' => BondSym::Dir(false),
                        _ => return Err(self.err("quadruple bonds are not supported")),
                    });
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.attach(atom)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.attach(atom)?;
                }
            }
        }
        if !self.branches.is_empty() {
            return Err(self.err("unclosed branch"));
        }
        if !self.rings.is_empty() {
            return Err(self.err("unclosed ring"));
        }
        if self.pending.is_some() {
            return Err(self.err("dangling bond symbol"));
        }
        self.finish()
    }

    fn organic_atom(&mut self) -> Result<(Atom, bool)> {
        let rest = &self.s[self.pos..];
        let (atom, len) = match rest {
            [b'C', b'l', ..] => (Atom::new(Element::CL), 2),
            [b'B', b'r', ..] => (Atom::new(Element::BR), 2),
            [b'B', ..] => (Atom::new(Element::B), 1),
            [b'C', ..] => (Atom::new(Element::C), 1),
            [b'N', ..] => (Atom::new(Element::N), 1),
            [b'O', ..] => (Atom::new(Element::O), 1),
            [b'P', ..] => (Atom::new(Element::P), 1),
            [b'S', ..] => (Atom::new(Element::S), 1),
            [b'F', ..] => (Atom::new(Element::F), 1),
            [b'I', ..] => (Atom::new(Element::I), 1),
            [b'b', ..] => (Atom::aromatic(Element::B), 1),
            [b'c', ..] => (Atom::aromatic(Element::C), 1),
            [b'n', ..] => (Atom::aromatic(Element::N), 1),
            [b'o', ..] => (Atom::aromatic(Element::O), 1),
            [b'p', ..] => (Atom::aromatic(Element::P), 1),
            [b's', ..] => (Atom::aromatic(Element::S), 1),
            [b'*', ..] => (Atom::new(Element::WILDCARD), 1),
            _ => return Err(self.err("unexpected character")),
        };
        self.pos += len;
        Ok((atom, false))
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        (self.pos > start).then(|| self.src[start..self.pos].parse().ok()).flatten()
    }

    /// Returns the atom and whether it carries an explicit H (for chirality order).
    fn bracket_atom(&mut self) -> Result<(Atom, bool)> {
        self.pos += 1;
        let isotope = self.number().map(|n| n as u16);
        let rest = &self.s[self.pos..];
        let mut atom = if rest.first().is_some_and(|c| c.is_ascii_lowercase()) {
            let two = std::str::from_utf8(&rest[..rest.len().min(2)]).unwrap_or("");
            let (sym, len) = match two {
                "se" | "as" | "te" => (two, 2),
                _ => (std::str::from_utf8(&rest[..1]).unwrap_or(""), 1),
            };
            let mut upper = sym.to_string();
            upper[..1].make_ascii_uppercase();
            let el = Element::from_symbol(&upper)
                .filter(|_| matches!(sym, "b" | "c" | "n" | "o" | "p" | "s" | "se" | "as" | "te"))
                .ok_or_else(|| self.err(format!("unknown aromatic symbol `{sym}`")))?;
            self.pos += len;
            Atom::aromatic(el)
        } else if rest.first().is_some_and(|c| c.is_ascii_uppercase() || *c == b'*') {
            let el = if rest[0] == b'*' {
                self.pos += 1;
                Element::WILDCARD
            } else {
                let two = rest
                    .get(..2)
                    .filter(|t| t[1].is_ascii_lowercase())
                    .and_then(|t| std::str::from_utf8(t).ok())
                    .and_then(Element::from_symbol);
                match two {
                    Some(e) => {
                        self.pos += 2;
                        e
                    }
                    None => {
                        let one = std::str::from_utf8(&rest[..1]).ok().and_then(Element::from_symbol);
                        self.pos += 1;
                        one.ok_or_else(|| self.err("unknown element"))?
                    }
                }
            };
            Atom::new(el)
        } else {
            return Err(self.err("expected element symbol"));
        };
        atom.isotope = isotope;

        let mut chirality = None;
        if self.peek() == Some(b'@') {
            self.pos += 1;
            let mut anticlockwise = true;
            if self.peek() == Some(b'@') {
                self.pos += 1;
                anticlockwise = false;
            }
            let rest = &self.s[self.pos..];
            if rest.starts_with(b"TH") || rest.starts_with(b"AL") || rest.starts_with(b"SP")
                || rest.starts_with(b"TB") || rest.starts_with(b"OH")
            {
                let tetra = rest.starts_with(b"TH");
                self.pos += 2;
                let class = self.number().unwrap_or(1);
                chirality = tetra.then_some(class == 1);
            } else {
                chirality = Some(anticlockwise);
            }
        }

        let mut has_h = false;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            let h = self.number().unwrap_or(1);
            atom.hcount = Some(h as u8);
            has_h = h > 0;
        } else {
            atom.hcount = Some(0);
        }

        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let unit: i8 = if sign == b'+' { 1 } else { -1 };
            let mut charge = unit;
            if let Some(n) = self.number() {
                charge = unit * n as i8;
            } else {
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
            atom.charge = charge;
        }

        if self.peek() == Some(b':') {
            self.pos += 1;
            atom.map = self.number().ok_or_else(|| self.err("atom class without digits"))?;
        }
        if self.peek() != Some(b']') {
            return Err(self.err("expected ']'"));
        }
        self.pos += 1;
        self.chiral_pending = chirality;
        Ok((atom, has_h))
    }

    fn attach(&mut self, (atom, has_h): (Atom, bool)) -> Result<()> {
        let idx = self.mol.add_atom(atom);
        self.order.push(Vec::new());
        self.chiral.push(self.chiral_pending.take());
        if let Some(p) = self.prev {
            let sym = self.pending.take();
            self.bond(p, idx, sym, p)?;
            self.order[idx].push(Slot::Atom(p));
            self.order[p].push(Slot::Atom(idx));
        } else if self.pending.is_some() {
            return Err(self.err("bond symbol without preceding atom"));
        }
        if has_h {
            self.order[idx].push(Slot::H);
        } else if self.chiral[idx].is_some() {
            self.order[idx].push(Slot::Implicit);
        }
        self.prev = Some(idx);
        Ok(())
    }

    /// Creates the bond `a`-`b`; `written_first` is the atom the symbol follows.
    fn bond(&mut self, a: usize, b: usize, sym: Option<BondSym>, written_first: usize) -> Result<()> {
        let order = match sym {
            Some(BondSym::Order(o)) => o,
            Some(BondSym::Dir(_)) => BondOrder::Single,
            None if self.mol.atoms[a].aromatic && self.mol.atoms[b].aromatic => BondOrder::Aromatic,
            None => BondOrder::Single,
        };
        let idx = self
            .mol
            .add_bond(a, b, order)
            .ok_or_else(|| self.err("duplicate bond or self-bond"))?;
        if let Some(BondSym::Dir(slash)) = sym {
            let second = if written_first == a { b } else { a };
            self.marks.entry(idx).or_default().push(DirMark {
                first: written_first,
                second,
                slash,
            });
        }
        Ok(())
    }

    fn ring_closure(&mut self) -> Result<()> {
        let cur = self.prev.ok_or_else(|| self.err("ring closure without atom"))?;
        let num = if self.peek() == Some(b'%') {
            self.pos += 1;
            let digits = self.s.get(self.pos..self.pos + 2).ok_or_else(|| self.err("truncated %nn"))?;
            if !digits.iter().all(u8::is_ascii_digit) {
                return Err(self.err("expected two digits after '%'"));
            }
            self.pos += 2;
            std::str::from_utf8(digits).unwrap().parse::<u32>().unwrap()
        } else {
            let d = (self.s[self.pos] - b'0') as u32;
            self.pos += 1;
            d
        };
        let sym = self.pending.take();
        match self.rings.remove(&num) {
            None => {
                let token = self.next_token;
                self.next_token += 1;
                self.order[cur].push(Slot::Pending(token));
                self.rings.insert(num, RingOpen { atom: cur, sym, token });
            }
            Some(open) => {
                if open.atom == cur {
                    return Err(self.err("ring closure to same atom"));
                }
                let order_of = |s: Option<BondSym>| match s {
                    Some(BondSym::Order(o)) => Some(o),
                    _ => None,
                };
                if let (Some(x), Some(y)) = (order_of(open.sym), order_of(sym)) {
                    if x != y {
                        return Err(self.err("conflicting ring-closure bond orders"));
                    }
                }
                let (chosen, first) = match (open.sym, sym) {
                    (Some(s @ BondSym::Order(_)), _) => (Some(s), open.atom),
                    (_, Some(s @ BondSym::Order(_))) => (Some(s), cur),
                    (Some(s), _) => (Some(s), open.atom),
                    (None, s) => (s, cur),
                };
                self.bond(open.atom, cur, chosen, first)?;
                let bi = self.mol.bond_between(open.atom, cur).unwrap();
                // a direction marker may sit on the side that did not define the order
                for (side_sym, side_first) in [(open.sym, open.atom), (sym, cur)] {
                    if let Some(BondSym::Dir(slash)) = side_sym {
                        if side_first != first || !matches!(chosen, Some(BondSym::Dir(_))) {
                            let second = if side_first == open.atom { cur } else { open.atom };
                            self.marks.entry(bi).or_default().push(DirMark {
                                first: side_first,
                                second,
                                slash,
                            });
                        }
                    }
                }
                for slot in self.order[open.atom].iter_mut() {
                    if matches!(slot, Slot::Pending(t) if *t == open.token) {
                        *slot = Slot::Atom(cur);
                    }
                }
                self.order[cur].push(Slot::Atom(open.atom));
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Molecule> {
        for (i, chir) in self.chiral.iter().enumerate() {
            let Some(anticlockwise) = *chir else { continue };
            let explicit = self.order[i].iter().filter(|s| !matches!(s, Slot::Implicit)).count();
            let neighbors: Vec<Option<usize>> = self.order[i]
                .iter()
                .filter(|s| explicit < 4 || !matches!(s, Slot::Implicit))
                .map(|s| match s {
                    Slot::Atom(a) => Some(*a),
                    _ => None,
                })
                .collect();
            if neighbors.len() == 4 {
                self.mol.atoms[i].chirality = Some(Tetra {
                    neighbors,
                    anticlockwise,
                });
            }
        }
        let up_of = |m: &DirMark, center: usize| -> bool {
            // neighbor relative to `center`
            if m.second == center {
                !m.slash
            } else {
                m.slash
            }
        };
        let mut stereo = Vec::new();
        for (bi, b) in self.mol.bonds.iter().enumerate() {
            if b.order != BondOrder::Double {
                continue;
            }
            let side = |center: usize, other: usize| -> Option<(usize, bool)> {
                self.mol.neighbors(center).iter().find_map(|&(n, nbi)| {
                    if n == other {
                        return None;
                    }
                    let m = self.marks.get(&nbi)?.iter().find(|m| m.first == center || m.second == center)?;
                    Some((n, up_of(m, center)))
                })
            };
            if let (Some((x, xu)), Some((y, yu))) = (side(b.a, b.b), side(b.b, b.a)) {
                stereo.push((bi, DbStereo {
                    ref_a: x,
                    ref_b: y,
                    cis: xu == yu,
                }));
            }
        }
        for (bi, s) in stereo {
            self.mol.bonds[bi].stereo = Some(s);
        }
        Ok(self.mol)
    }
}
