use std::fmt;

use super::{Flag, Register};

/// A set of registers and flags, one bit per location.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct LocSet(u16);

impl LocSet {
    pub const EMPTY: LocSet = LocSet(0);
    pub const REGS: LocSet = LocSet(0x00ff);
    pub const FLAGS: LocSet = LocSet(0x0f00);
    pub const ALL: LocSet = LocSet(0x0fff);

    pub fn reg(r: Register) -> LocSet {
        LocSet(1 << r.index())
    }

    pub fn flag(f: Flag) -> LocSet {
        LocSet(1 << (8 + f.index()))
    }

    pub fn flags(fs: &[Flag]) -> LocSet {
        fs.iter()
            .fold(LocSet::EMPTY, |acc, f| acc | LocSet::flag(*f))
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn from_bits(bits: u16) -> LocSet {
        LocSet(bits & Self::ALL.0)
    }

    pub fn contains_reg(self, r: Register) -> bool {
        self.0 & LocSet::reg(r).0 != 0
    }

    pub fn contains_flag(self, f: Flag) -> bool {
        self.0 & LocSet::flag(f).0 != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersects(self, other: LocSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn insert_reg(&mut self, r: Register) {
        self.0 |= LocSet::reg(r).0;
    }

    pub fn insert_flag(&mut self, f: Flag) {
        self.0 |= LocSet::flag(f).0;
    }

    pub fn registers(self) -> impl Iterator<Item = Register> {
        Register::ALL
            .into_iter()
            .filter(move |r| self.contains_reg(*r))
    }

    pub fn flag_iter(self) -> impl Iterator<Item = Flag> {
        Flag::ALL
            .into_iter()
            .filter(move |f| self.contains_flag(*f))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }
}

impl std::ops::BitOr for LocSet {
    type Output = LocSet;
    fn bitor(self, rhs: LocSet) -> LocSet {
        LocSet(self.0 | rhs.0)
    }
}

impl std::ops::BitOrAssign for LocSet {
    fn bitor_assign(&mut self, rhs: LocSet) {
        self.0 |= rhs.0;
    }
}

impl std::ops::BitAnd for LocSet {
    type Output = LocSet;
    fn bitand(self, rhs: LocSet) -> LocSet {
        LocSet(self.0 & rhs.0)
    }
}

impl std::ops::Sub for LocSet {
    type Output = LocSet;
    fn sub(self, rhs: LocSet) -> LocSet {
        LocSet(self.0 & !rhs.0)
    }
}

impl fmt::Debug for LocSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .registers()
            .map(Register::name)
            .chain(self.flag_iter().map(Flag::name))
            .collect();
        write!(f, "{{{}}}", names.join(", "))
    }
}
