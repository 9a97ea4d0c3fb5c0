use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Service {
    Store,
    SBinder,
    PBinder,
    Ver,
    Fire,
}

impl Service {
    pub const ALL: [Service; 5] = [
        Service::Store,
        Service::SBinder,
        Service::PBinder,
        Service::Ver,
        Service::Fire,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Service::Store => "STORE",
            Service::SBinder => "SBINDER",
            Service::PBinder => "PBINDER",
            Service::Ver => "VER",
            Service::Fire => "FIRE",
        }
    }
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Service {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Service::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown service {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Right {
    Get,
    Put,
    Remove,
    Fire,
    Admin,
}

impl Right {
    pub const ALL: [Right; 5] = [Right::Get, Right::Put, Right::Remove, Right::Fire, Right::Admin];

    pub fn name(self) -> &'static str {
        match self {
            Right::Get => "GET",
            Right::Put => "PUT",
            Right::Remove => "REMOVE",
            Right::Fire => "FIRE",
            Right::Admin => "ADMIN",
        }
    }
}

impl fmt::Display for Right {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Right {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Right::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown right {s:?}"))
    }
}

/// A set of (service, right) grants.
///
/// Text form: `STORE:PUT,GET;FIRE:FIRE`. The literal `ALL` grants every pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RightSet(BTreeSet<(Service, Right)>);

impl RightSet {
    pub fn empty() -> Self {
        RightSet::default()
    }

    pub fn all() -> Self {
        let mut set = BTreeSet::new();
        for s in Service::ALL {
            for r in Right::ALL {
                set.insert((s, r));
            }
        }
        RightSet(set)
    }

    pub fn with(mut self, service: Service, right: Right) -> Self {
        self.0.insert((service, right));
        self
    }

    pub fn contains(&self, service: Service, right: Right) -> bool {
        self.0.contains(&(service, right))
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Service, Right)> {
        self.0.iter()
    }

    pub fn is_subset(&self, other: &RightSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromStr for RightSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("ALL") {
            return Ok(RightSet::all());
        }
        let mut set = RightSet::empty();
        for group in s.split(';').map(str::trim).filter(|g| !g.is_empty()) {
            let (service, rights) = group
                .split_once(':')
                .ok_or_else(|| format!("rights group {group:?} lacks ':'"))?;
            let service: Service = service.parse()?;
            for r in rights.split(',').map(str::trim).filter(|r| !r.is_empty()) {
                set.0.insert((service, r.parse()?));
            }
        }
        Ok(set)
    }
}

impl fmt::Display for RightSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first_group = true;
        for service in Service::ALL {
            let rights: Vec<_> = self
                .0
                .iter()
                .filter(|(s, _)| *s == service)
                .map(|(_, r)| r.name())
                .collect();
            if rights.is_empty() {
                continue;
            }
            if !first_group {
                f.write_str(";")?;
            }
            first_group = false;
            write!(f, "{}:{}", service, rights.join(","))?;
        }
        Ok(())
    }
}
