//! Periodic-table lookups needed by the SMILES reader/writer and valence guard.

const SYMBOLS: [&str; 87] = [
    "*", "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge",
    "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd",
    "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn",
];

/// Atomic number wrapper; `0` is the SMILES wildcard `*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Element(pub u8);

impl Element {
    pub const WILDCARD: Element = Element(0);
    pub const H: Element = Element(1);
    pub const B: Element = Element(5);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const F: Element = Element(9);
    pub const P: Element = Element(15);
    pub const S: Element = Element(16);
    pub const CL: Element = Element(17);
    pub const BR: Element = Element(35);
    pub const I: Element = Element(53);

    pub fn from_symbol(sym: &str) -> Option<Element> {
        SYMBOLS
            .iter()
            .position(|s| *s == sym)
            .map(|z| Element(z as u8))
    }

    pub fn symbol(self) -> &'static str {
        SYMBOLS.get(self.0 as usize).copied().unwrap_or("*")
    }

    /// Normal valences of the SMILES organic subset, smallest first.
    pub fn default_valences(self) -> &'static [u8] {
        match self.0 {
            5 => &[3],
            6 => &[4],
            7 => &[3, 5],
            8 => &[2],
            15 => &[3, 5],
            16 => &[2, 4, 6],
            9 | 17 | 35 | 53 => &[1],
            _ => &[],
        }
    }

    pub fn is_organic_subset(self) -> bool {
        !self.default_valences().is_empty()
    }

    /// Elements that may be written as bare lowercase aromatic symbols.
    pub fn aromatic_organic(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 15 | 16)
    }

    /// Whether an aromatic atom of this element contributes one extra unit of
    /// bond order from the delocalised system (c, n, b, p) or donates a lone
    /// pair instead (o, s, se).
    pub(crate) fn aromatic_pi_bond(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 15 | 33)
    }

    /// Upper bound on total bond order (including hydrogens) used by the
    /// generation valence guard. Charge shifts the bound for N/O.
    pub fn max_valence(self, charge: i8) -> u8 {
        let base: i16 = match self.0 {
            1 | 3 | 9 | 11 | 19 | 55 => 1,
            17 | 35 => 1,
            53 => 3,
            4 | 12 | 20 | 30 | 48 | 56 => 2,
            8 => 2,
            5 | 13 => 3,
            7 => 3,
            6 | 14 | 32 | 50 | 82 => 4,
            15 | 33 => 5,
            16 | 34 => 6,
            29 | 47 | 79 => 2,
            26 | 27 | 28 | 46 | 78 => 4,
            _ => 6,
        };
        let adjusted = match self.0 {
            7 | 15 | 8 | 16 => base + charge as i16,
            6 => base - charge.abs() as i16,
            5 => base - charge as i16,
            _ => base,
        };
        adjusted.clamp(0, 8) as u8
    }
}

impl std::fmt::Display for Element {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_round_trip() {
        for z in 0..SYMBOLS.len() as u8 {
            let e = Element(z);
            assert_eq!(Element::from_symbol(e.symbol()), Some(e));
        }
        assert_eq!(Element::from_symbol("Cl"), Some(Element::CL));
        assert_eq!(Element::from_symbol("Xx"), None);
    }

    #[test]
    fn charged_nitrogen_gains_a_bond() {
        assert_eq!(Element::N.max_valence(0), 3);
        assert_eq!(Element::N.max_valence(1), 4);
        assert_eq!(Element::O.max_valence(-1), 1);
    }
}
