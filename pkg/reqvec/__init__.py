#!/usr/bin/env python3
"""
reqvec – unsupervised HTTP request embeddings for anomaly detection.

Public modules:
- reqvec.config          – Settings via pydantic-settings
- reqvec.schemas         – Pydantic models
- reqvec.errors          – Exception hierarchy with CLI exit codes
- reqvec.request_parser  – Request parsing and normalization profiles
- reqvec.corpus          – Corpus IO and stratified folds
- reqvec.synthetic       – Templated synthetic corpora
- reqvec.tokenizer       – Byte-level BPE
- reqvec.tensor_io       – Binary tensor container
- reqvec.encoder         – Transformer encoder and masked-LM training
- reqvec.embedder        – Request vectors
- reqvec.classify        – Logistic regression, linear SVM, random forest
- reqvec.metrics         – FPR90/FPR99/F1/MCC and cross-validation
- reqvec.explain         – Token attribution, neighbours, highlighting
- reqvec.project         – t-SNE
- reqvec.cli             – Command-line pipeline
"""
