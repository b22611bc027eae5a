use crate::encoders::ViewSchema;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// A batch of samples: one `f64` tensor per view plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewBatch {
    pub schemas: Vec<ViewSchema>,
    /// `[B, T, D]` for temporal views, `[B, D]` for static views.
    pub views: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl MultiViewBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn view(&self, name: &str) -> Result<(&ViewSchema, &Tensor)> {
        self.schemas
            .iter()
            .position(|s| s.name == name)
            .map(|i| (&self.schemas[i], &self.views[i]))
            .ok_or_else(|| Error::Schema(format!("batch has no view `{name}`")))
    }

    /// The same batch restricted to `names` (in that order).
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let mut schemas = Vec::new();
        let mut views = Vec::new();
        for n in names {
            let (s, t) = self.view(n)?;
            schemas.push(s.clone());
            views.push(t.clone());
        }
        Ok(Self {
            schemas,
            views,
            labels: self.labels.clone(),
        })
    }
}
