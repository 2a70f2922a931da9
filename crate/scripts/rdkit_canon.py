"""External canonicalizer speaking the trex line protocol.

stdin:  "<0|1>\t<smiles>" per line (1 keeps stereo)
stdout: canonical SMILES without atom maps, or "!<reason>"
Use with TREX_CANONICALIZER="python3 scripts/rdkit_canon.py".
"""
import sys

from rdkit import Chem, RDLogger

RDLogger.DisableLog("rdApp.*")


def canonical(smiles, stereo):
    mol = Chem.MolFromSmiles(smiles)
    if mol is None:
        return "!unparseable"
    for atom in mol.GetAtoms():
        atom.SetAtomMapNum(0)
    return Chem.MolToSmiles(mol, isomericSmiles=stereo)


def main():
    for line in sys.stdin:
        flag, _, smiles = line.rstrip("\n").partition("\t")
        sys.stdout.write(canonical(smiles, flag == "1") + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
