# Copyright 2026 The cexplain Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Concept-based explanations for image classifiers."""

from cexplain._cexplain import (
    Error,
    Model,
    PipelineError,
    SchemaError,
    aggregate,
    build_questionnaire,
    explain,
    load_bundle,
    load_model,
    mine_prototypes,
    parse_taxonomy,
    predict,
    question_text,
    sample_bundles,
    top_concepts,
    validate_response,
)

__all__ = [
    "Error",
    "Model",
    "PipelineError",
    "SchemaError",
    "aggregate",
    "build_questionnaire",
    "explain",
    "load_bundle",
    "load_model",
    "mine_prototypes",
    "parse_taxonomy",
    "predict",
    "question_text",
    "sample_bundles",
    "top_concepts",
    "validate_response",
]
