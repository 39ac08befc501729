use std::ops::Deref;

/// One code index per quantization stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeVector(Vec<u32>);

impl CodeVector {
    pub fn new(codes: Vec<u32>) -> Self {
        CodeVector(codes)
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

impl Deref for CodeVector {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for CodeVector {
    fn from(codes: Vec<u32>) -> Self {
        CodeVector(codes)
    }
}
