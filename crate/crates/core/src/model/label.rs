use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named group of mutually exclusive classes, e.g. `("speaker", 4)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub classes: usize,
}

impl Category {
    pub fn new(name: impl Into<String>, classes: usize) -> Self {
        Category {
            name: name.into(),
            classes,
        }
    }
}

/// Concatenation of one one-hot vector per category.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeLabel {
    categories: Vec<Category>,
    value: Vec<f64>,
}

impl AttributeLabel {
    /// Builds a label selecting `classes[i]` within `categories[i]`.
    pub fn new(categories: &[Category], classes: &[usize]) -> Result<Self> {
        if categories.is_empty() || categories.iter().any(|c| c.classes == 0) {
            return Err(Error::Contract(
                "a label needs at least one category with at least one class".into(),
            ));
        }
        if classes.len() != categories.len() {
            return Err(Error::Contract(format!(
                "{} class indices for {} categories",
                classes.len(),
                categories.len()
            )));
        }
        let mut value = Vec::new();
        for (cat, &k) in categories.iter().zip(classes) {
            if k >= cat.classes {
                return Err(Error::Contract(format!(
                    "class {k} out of range for category '{}' with {} classes",
                    cat.name, cat.classes
                )));
            }
            let mut seg = vec![0.0; cat.classes];
            seg[k] = 1.0;
            value.extend(seg);
        }
        Ok(AttributeLabel {
            categories: categories.to_vec(),
            value,
        })
    }

    /// Single-category label, the usual speaker-identity case.
    pub fn one_hot(classes: usize, class: usize) -> Result<Self> {
        AttributeLabel::new(&[Category::new("speaker", classes)], &[class])
    }

    /// Validates an explicit concatenated one-hot vector.
    pub fn from_value(categories: &[Category], value: Vec<f64>) -> Result<Self> {
        let total: usize = categories.iter().map(|c| c.classes).sum();
        if total == 0 || value.len() != total {
            return Err(Error::Contract(format!(
                "label of length {} does not match {total} classes",
                value.len()
            )));
        }
        let mut start = 0;
        for cat in categories {
            let seg = &value[start..start + cat.classes];
            let ones = seg.iter().filter(|&&v| v == 1.0).count();
            let zeros = seg.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != seg.len() {
                return Err(Error::Contract(format!(
                    "segment for category '{}' is not one-hot: {seg:?}",
                    cat.name
                )));
            }
            start += cat.classes;
        }
        Ok(AttributeLabel {
            categories: categories.to_vec(),
            value,
        })
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    /// Selected class index within each category.
    pub fn classes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.categories.len());
        let mut start = 0;
        for cat in &self.categories {
            let seg = &self.value[start..start + cat.classes];
            out.push(seg.iter().position(|&v| v == 1.0).unwrap_or(0));
            start += cat.classes;
        }
        out
    }
}

/// `(start, len)` of each category's segment within the concatenated label.
pub fn category_groups(categories: &[Category]) -> Vec<(usize, usize)> {
    let mut start = 0;
    categories
        .iter()
        .map(|c| {
            let g = (start, c.classes);
            start += c.classes;
            g
        })
        .collect()
}

/// Tiles `c` over a `q x n` plane: one constant channel per label element.
pub fn broadcast_label(c: &AttributeLabel, (q, n): (usize, usize)) -> Result<Tensor> {
    if q == 0 || n == 0 {
        return Err(Error::dim(format!(
            "label tiling target {q}x{n} must be positive"
        )));
    }
    let plane = q * n;
    let data = c
        .value
        .iter()
        .flat_map(|&v| std::iter::repeat(v).take(plane))
        .collect();
    Tensor::new(&[c.len(), q, n], data)
}

/// Batched tiling: `[B, L, q, n]`.
pub(crate) fn tile_labels(labels: &[AttributeLabel], (q, n): (usize, usize)) -> Result<Tensor> {
    let first = labels
        .first()
        .ok_or_else(|| Error::Contract("empty label batch".into()))?;
    let mut data = Vec::with_capacity(labels.len() * first.len() * q * n);
    for l in labels {
        if l.len() != first.len() {
            return Err(Error::dim("labels in a batch must have equal length"));
        }
        data.extend_from_slice(broadcast_label(l, (q, n))?.data());
    }
    Tensor::new(&[labels.len(), first.len(), q, n], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiling_examples() {
        let c = AttributeLabel::one_hot(2, 0).unwrap();
        let t = broadcast_label(&c, (2, 3)).unwrap();
        assert_eq!(t.shape(), &[2, 2, 3]);
        assert_eq!(&t.data()[..6], &[1.0; 6]);
        assert_eq!(&t.data()[6..], &[0.0; 6]);

        let c4 = AttributeLabel::one_hot(4, 3).unwrap();
        for shape in [(1, 1), (5, 7)] {
            assert_eq!(broadcast_label(&c4, shape).unwrap().shape()[0], 4);
        }
    }

    #[test]
    fn multi_category_labels() {
        let cats = [Category::new("speaker", 3), Category::new("emotion", 2)];
        let l = AttributeLabel::new(&cats, &[2, 0]).unwrap();
        assert_eq!(l.value(), &[0.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(l.classes(), vec![2, 0]);
        assert_eq!(category_groups(&cats), vec![(0, 3), (3, 2)]);
        assert!(AttributeLabel::new(&cats, &[3, 0]).is_err());
        assert!(AttributeLabel::from_value(&cats, vec![1.0, 1.0, 0.0, 0.0, 1.0]).is_err());
        assert_eq!(
            AttributeLabel::from_value(&cats, l.value().to_vec()).unwrap(),
            l
        );
    }
}
