// Copyright 2026 The hsdlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Built-in knowledge for the twelve default abnormality classes. Each entry
// carries two subject phrasings and eight short facts; the definition and the
// description bank are assembled from them so that every paraphrase shares
// vocabulary with the definition.

#include <algorithm>
#include <set>

#include "hsdlab/catalog.hpp"
#include "hsdlab/common.hpp"

namespace hsd {
namespace {

struct EntitySource {
  const char* name;
  std::vector<std::string> synonyms;
  std::vector<std::string> subjects;
  std::vector<std::string> facts;  // verb phrases, subject omitted
};

const std::vector<EntitySource>& sources() {
  static const std::vector<EntitySource> kSources = {
      {"ASD",
       {"atrial septal defect", "asd", "interatrial septal defect"},
       {"An atrial septal defect", "Atrial septal defect (ASD)"},
       {"is a congenital opening in the septum that separates the left and right atria",
        "lets oxygenated blood pass from the left atrium into the right atrium",
        "adds volume load to the right side of the heart",
        "typically causes a soft systolic ejection murmur at the upper left sternal border",
        "is associated with wide fixed splitting of the second heart sound",
        "may close on its own when the defect is small",
        "can enlarge the right atrium and right ventricle over time",
        "is among the most frequent congenital heart lesions in children"}},
      {"VSD",
       {"ventricular septal defect", "vsd", "interventricular septal defect"},
       {"A ventricular septal defect", "Ventricular septal defect (VSD)"},
       {"is a congenital opening in the septum between the left and right ventricles",
        "lets blood cross from the left ventricle into the right ventricle during systole",
        "produces a harsh holosystolic murmur at the lower left sternal border",
        "raises pulmonary blood flow when the opening is large",
        "is the most common congenital heart defect in newborns",
        "may be located in the membranous or muscular part of the septum",
        "often closes spontaneously when it is small and muscular",
        "can cause heart failure and poor growth in infancy if large"}},
      {"PVS",
       {"pulmonary valve stenosis", "pulmonary stenosis", "pulmonic stenosis", "pvs"},
       {"Pulmonary valve stenosis", "Pulmonary stenosis (PVS)"},
       {"is a narrowing of the pulmonary valve that obstructs flow out of the right ventricle",
        "forces the right ventricle to pump against increased pressure",
        "produces a systolic ejection murmur at the upper left sternal border",
        "is often preceded by an ejection click that varies with breathing",
        "can thicken the right ventricular wall over time",
        "is usually congenital and caused by fused or thickened valve leaflets",
        "may be treated with balloon valvuloplasty when severe",
        "ranges from mild forms without symptoms to critical forms in newborns"}},
      {"PDA",
       {"patent ductus arteriosus", "pda", "persistent ductus arteriosus"},
       {"A patent ductus arteriosus", "Patent ductus arteriosus (PDA)"},
       {"is a persistent vessel connecting the aorta and the pulmonary artery after birth",
        "fails to close in the first days of life as the fetal ductus normally would",
        "lets blood flow from the aorta into the pulmonary artery",
        "produces a continuous machinery murmur below the left clavicle",
        "is more common in premature infants",
        "can overload the left atrium and left ventricle when large",
        "may be closed with medication, a catheter device, or surgery",
        "widens pulse pressure and causes bounding pulses"}},
      {"PFO",
       {"patent foramen ovale", "pfo"},
       {"A patent foramen ovale", "Patent foramen ovale (PFO)"},
       {"is a flap-like opening between the atria that remains after birth",
        "is a remnant of the fetal foramen ovale that failed to seal",
        "usually lets only a small amount of blood cross between the atria",
        "is found in about a quarter of the general population",
        "rarely produces a murmur or symptoms",
        "may allow paradoxical emboli to pass from the right to the left atrium",
        "is often detected by a bubble study on echocardiography",
        "differs from a true septal defect because no septal tissue is missing"}},
      {"AS",
       {"aortic stenosis", "aortic valve stenosis"},
       {"Aortic stenosis", "Aortic valve stenosis (AS)"},
       {"is a narrowing of the aortic valve opening that obstructs flow out of the left ventricle",
        "makes the left ventricle generate higher pressure to eject blood",
        "produces a crescendo-decrescendo systolic murmur at the right upper sternal border",
        "often radiates to the carotid arteries",
        "can be congenital, for example with a bicuspid aortic valve",
        "leads to thickening of the left ventricular wall",
        "may cause chest pain, fainting, or breathlessness with exertion",
        "softens the aortic component of the second heart sound when severe"}},
      {"PH",
       {"pulmonary hypertension", "pulmonary arterial hypertension"},
       {"Pulmonary hypertension", "Pulmonary hypertension (PH)"},
       {"is abnormally high blood pressure in the pulmonary arteries",
        "increases the workload of the right ventricle",
        "accentuates the pulmonary component of the second heart sound",
        "may be caused by left-to-right shunts, lung disease, or left heart disease",
        "can lead to right ventricular hypertrophy and failure",
        "is often estimated on echocardiography from the tricuspid regurgitation jet",
        "causes breathlessness and fatigue on exertion",
        "is a serious complication of untreated congenital shunts"}},
      {"Prolapse",
       {"prolapse", "prolapsed"},
       {"Valve prolapse", "Prolapse of a heart valve"},
       {"is the bulging of a valve leaflet backward into the atrium during systole",
        "most often affects the mitral valve",
        "produces a mid-systolic click followed by a late systolic murmur",
        "can allow blood to leak backward through the valve",
        "results from floppy or redundant leaflet tissue",
        "is often benign and discovered incidentally",
        "changes with posture because ventricular volume alters leaflet motion",
        "may be associated with connective tissue disorders"}},
      {"Regurgitation",
       {"regurgitation", "insufficiency", "regurgitant"},
       {"Valvular regurgitation", "Regurgitation"},
       {"is the backward leaking of blood through a heart valve that does not close tightly",
        "may affect the mitral, tricuspid, aortic, or pulmonary valve",
        "adds volume load to the chamber that receives the leaking blood",
        "produces a blowing murmur whose timing depends on the affected valve",
        "is also called valvular insufficiency or incompetence",
        "is graded from trivial to severe on color Doppler echocardiography",
        "can enlarge the heart chambers when it is significant",
        "is frequently trivial and physiological in healthy children"}},
      {"Shunt",
       {"shunt", "shunting"},
       {"A cardiac shunt", "An intracardiac shunt"},
       {"is an abnormal pattern of blood flow between the left and right circulations",
        "is usually directed from left to right because pressures are higher on the left",
        "occurs through septal defects or abnormal vessel connections",
        "increases blood flow to the lungs when directed from left to right",
        "can reverse to right-to-left flow when pulmonary pressure rises",
        "is quantified by the ratio of pulmonary to systemic flow",
        "produces turbulent flow that may be heard as a murmur",
        "is detected on echocardiography with color Doppler imaging"}},
      {"Hypertrophy",
       {"hypertrophy", "hypertrophic"},
       {"Ventricular hypertrophy", "Cardiac hypertrophy"},
       {"is a thickening of the muscular wall of a heart chamber",
        "develops when a ventricle works against increased pressure for a long time",
        "most often affects the left ventricle",
        "can stiffen the ventricle and impair its filling",
        "may be caused by outflow obstruction, hypertension, or inherited cardiomyopathy",
        "is measured on echocardiography as increased wall thickness",
        "can produce a fourth heart sound when the ventricle is stiff",
        "may narrow the outflow tract and produce a systolic murmur"}},
      {"Dilation",
       {"dilation", "dilatation", "dilated", "enlargement", "enlarged"},
       {"Chamber dilation", "Cardiac dilatation"},
       {"is an enlargement of a heart chamber or great vessel beyond its normal size",
        "often results from long-standing volume overload",
        "may affect the atria, the ventricles, or the pulmonary artery",
        "can weaken the pumping function of the ventricle",
        "is measured on echocardiography as an increased chamber diameter",
        "may stretch valve rings and cause functional regurgitation",
        "can reduce the intensity of the heart sounds",
        "is also described as enlargement or dilatation"}},
  };
  return kSources;
}

std::vector<std::string> build_bank(const EntitySource& src, std::size_t size) {
  const auto& f = src.facts;
  std::vector<std::string> all;
  for (std::size_t a = 0; a < f.size(); ++a) {
    for (std::size_t b = 0; b < f.size(); ++b) {
      for (std::size_t c = b + 1; c < f.size(); ++c) {
        if (b == a || c == a) continue;
        for (const auto& subject : src.subjects) {
          all.push_back(subject + " " + f[a] + ". It " + f[b] + ", and it " + f[c] + ".");
          all.push_back(subject + " " + f[a] + " and " + f[b] + ". It also " + f[c] + ".");
        }
      }
    }
  }
  Rng rng(fnv1a64(src.name));
  rng.shuffle(all.begin(), all.end());
  all.resize(std::min(size, all.size()));
  return all;
}

}  // namespace

std::vector<std::string> default_entity_order() {
  std::vector<std::string> order;
  for (const auto& s : sources()) order.emplace_back(s.name);
  return order;
}

std::vector<AbnormalityEntity> default_knowledge_base() {
  std::vector<AbnormalityEntity> out;
  for (const auto& s : sources()) {
    AbnormalityEntity e;
    e.entity_id = static_cast<int>(out.size());
    e.canonical_name = s.name;
    e.synonyms = s.synonyms;
    e.definition_text =
        s.subjects[0] + " " + s.facts[0] + ". It " + s.facts[1] + ", and it " + s.facts[2] + ".";
    e.description_bank = build_bank(s, 100);
    out.push_back(std::move(e));
  }
  return out;
}

AbnormalityCatalog default_catalog() {
  AbnormalityCatalog c;
  c.entities = default_knowledge_base();
  c.k = static_cast<int>(c.entities.size());
  c.min_count = 20;
  return c;
}

SynonymTable default_synonym_table() {
  SynonymTable t = synonym_table_from(default_knowledge_base());
  // Medical entities that are not abnormalities.
  for (const char* s : {"mitral valve", "tricuspid valve", "aortic valve", "pulmonary valve", "left ventricle",
                        "right ventricle", "left atrium", "right atrium", "ventricular septum", "atrial septum",
                        "ejection fraction", "systolic function", "pericardial effusion", "aortic arch",
                        "pulmonary artery", "foramen ovale", "sinus rhythm"}) {
    t[s] = std::nullopt;
  }
  // Abnormalities too rare in typical corpora to enter the schema.
  t["bicuspid aortic valve"] = std::string("BAV");
  t["coarctation of the aorta"] = std::string("CoA");
  t["coarctation"] = std::string("CoA");
  t["ebstein anomaly"] = std::string("Ebstein");
  return t;
}

}  // namespace hsd
