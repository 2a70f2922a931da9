"""Writes randomized SMILES spellings of NCI molecules for canonicalization tests.

canon_variants.tsv: per molecule, the RDKit canonical form, two random atom
orders, and a Kekule form.
canon_stereo.tsv: per stereoisomer, a group id shared by isomers of one
constitution, then the RDKit canonical form and two random atom orders.
"""
import os
import random
import sys

from rdkit import Chem, RDConfig, RDLogger
from rdkit.Chem.EnumerateStereoisomers import EnumerateStereoisomers, StereoEnumerationOptions

RDLogger.DisableLog("rdApp.*")
ALLOWED = {"C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B", "Si", "Se"}


def stereo_rows(mols, limit=300):
    opts = StereoEnumerationOptions(onlyUnassigned=True, maxIsomers=4, unique=True)
    rows = []
    for gid, mol in enumerate(mols):
        isomers = list(EnumerateStereoisomers(mol, options=opts))
        if len(isomers) < 2:
            continue
        for iso in isomers:
            iso = Chem.MolFromSmiles(Chem.MolToSmiles(iso))
            can = Chem.MolToSmiles(iso)
            spell = [Chem.MolToSmiles(iso, doRandom=True, canonical=False) for _ in range(2)]
            # keep only spellings RDKit itself reads back as the same isomer
            if all(Chem.MolToSmiles(Chem.MolFromSmiles(x)) == can for x in spell):
                rows.append("\t".join([str(gid), can] + spell))
        if len(rows) >= limit:
            break
    return rows


def main(out_dir, limit=1200, seed=7):
    random.seed(seed)
    src = f"{RDConfig.RDDataDir}/NCI/first_5K.smi"
    rows = []
    mols = []
    with open(src) as fh:
        for line in fh:
            mol = Chem.MolFromSmiles(line.split()[0])
            if mol is None or mol.GetNumAtoms() > 40:
                continue
            if any(a.GetSymbol() not in ALLOWED for a in mol.GetAtoms()):
                continue
            mols.append(mol)
            can = Chem.MolToSmiles(mol)
            variants = [can]
            for _ in range(2):
                variants.append(Chem.MolToSmiles(mol, doRandom=True, canonical=False))
            kek = Chem.Mol(mol)
            Chem.Kekulize(kek, clearAromaticFlags=True)
            variants.append(Chem.MolToSmiles(kek, kekuleSmiles=True, doRandom=True, canonical=False))
            rows.append("\t".join(variants))
            if len(rows) >= limit:
                break
    with open(os.path.join(out_dir, "canon_variants.tsv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    with open(os.path.join(out_dir, "canon_stereo.tsv"), "w") as fh:
        fh.write("\n".join(stereo_rows(mols)) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
