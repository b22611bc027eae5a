use crate::encoders::ViewSchema;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Schema of the input-level fusion of `views`.
pub fn fused_schema(views: &[ViewSchema]) -> Result<ViewSchema> {
    if views.is_empty() {
        return Err(Error::Alignment("no views to align".into()));
    }
    if views.len() == 1 {
        return Ok(views[0].clone());
    }
    let channels = views.iter().map(|v| v.channels).sum();
    let mut steps = None;
    for v in views.iter().filter(|v| v.temporal) {
        match steps {
            None => steps = Some(v.steps),
            Some(t) if t != v.steps => {
                return Err(Error::Alignment(format!(
                    "temporal views disagree on length: {t} vs {} (`{}`)",
                    v.steps, v.name
                )))
            }
            _ => {}
        }
    }
    Ok(match steps {
        Some(t) => ViewSchema::temporal("fused", t, channels),
        None => ViewSchema::fixed("fused", channels),
    })
}

/// Aligns views on a common time axis (static views are repeated at every
/// step) and concatenates them along channels: `[B, T, ΣD]`.
pub fn align_and_merge_input(views: &[(&ViewSchema, &Tensor)]) -> Result<Tensor> {
    let schemas: Vec<ViewSchema> = views.iter().map(|(s, _)| (*s).clone()).collect();
    let fused = fused_schema(&schemas)?;
    if views.len() == 1 {
        return Ok(views[0].1.clone());
    }
    let batch = views[0].1.shape()[0];
    for (s, t) in views {
        if t.shape() != s.batch_shape(batch).as_slice() {
            return Err(Error::Alignment(format!(
                "view `{}` has shape {:?}, expected {:?}",
                s.name,
                t.shape(),
                s.batch_shape(batch)
            )));
        }
    }
    let steps = fused.steps.max(1);
    let width = fused.channels;
    let mut out = vec![0.0; batch * steps * width];
    let mut offset = 0;
    for (s, t) in views {
        let d = t.data();
        for b in 0..batch {
            for step in 0..steps {
                let dst = (b * steps + step) * width + offset;
                let src = if s.temporal {
                    (b * s.steps + step) * s.channels
                } else {
                    b * s.channels
                };
                out[dst..dst + s.channels].copy_from_slice(&d[src..src + s.channels]);
            }
        }
        offset += s.channels;
    }
    Tensor::new(fused.batch_shape(batch), out)
}
