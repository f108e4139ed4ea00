use std::collections::BTreeMap;

use super::generators::{
    GeneralizedI, Generator, ItakuraSaito, Logistic, Mahalanobis, SimplexKl, SqEuclidean,
};
use super::DivergenceSpec;
use crate::error::{Error, Result};

/// Builds a generator from validated parameters.
pub type GeneratorFactory = fn(&DivergenceSpec) -> Box<dyn Generator>;

/// Name-keyed table of generator constructors.
#[derive(Clone)]
pub struct GeneratorRegistry {
    factories: BTreeMap<&'static str, GeneratorFactory>,
}

impl GeneratorRegistry {
    pub fn empty() -> Self {
        GeneratorRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// Registry holding every divergence shipped with the crate.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("sq-euclidean", |s| Box::new(SqEuclidean::new(s.sigma)));
        reg.register("mahalanobis", |s| Box::new(Mahalanobis::new(&s.covariance_diag)));
        reg.register("gid", |_| Box::new(GeneralizedI));
        reg.register("kl", |_| Box::new(SimplexKl));
        reg.register("itakura-saito", |_| Box::new(ItakuraSaito));
        reg.register("logistic", |_| Box::new(Logistic));
        reg
    }

    pub fn register(&mut self, name: &'static str, factory: GeneratorFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(&self, spec: &DivergenceSpec) -> Result<Box<dyn Generator>> {
        let name = spec.kind.as_str();
        let factory = self.factories.get(name).ok_or_else(|| Error::Unknown {
            what: "divergence",
            name: name.to_string(),
        })?;
        Ok(factory(spec))
    }
}

impl std::fmt::Debug for GeneratorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::DivergenceKind;

    #[test]
    fn builtin_covers_every_kind() {
        let reg = GeneratorRegistry::builtin();
        for kind in DivergenceKind::ALL {
            let spec = DivergenceSpec::new(kind, 2);
            assert_eq!(reg.create(&spec).unwrap().name(), kind.as_str());
        }
    }

    #[test]
    fn empty_registry_rejects() {
        let reg = GeneratorRegistry::empty();
        let err = reg.create(&DivergenceSpec::gid(2, 0.5)).unwrap_err();
        assert!(matches!(err, Error::Unknown { .. }));
    }
}
