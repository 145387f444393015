#include <map>

#include "coma/agents.hpp"
#include "coma/common.hpp"

namespace coma::agents {

// Prompt assets used by the planner, trajectory and reviewer agents. Bodies
// are data, not documentation; placeholders are rendered by render_template.
namespace {

const char* kRecaption = R"TPL(You are a reasoning and action model. Your task is to accurately infer the posture and dynamic details of the human body based on a text description of motion, ensuring no information is lost. Your reasoning process involves understanding the motion, synthesizing the overall posture, and providing a detailed description of the movement of the arms, legs, and other body parts. Even if the input motion description is complex, you must strive to present each detail fully without simplifying any actions, ensuring no information is omitted.

The sentence should start with " A person ... " and should be easy to understand and should ONLY use words from the words list below. A word can be used as long as it is mentioned in the **words_list**, regardless of its form. For example, if "walking" is in the **words_list**, then "walks" can also be used.

 <words_list>
    words = [{words_list}]
</words_list>

Here is an example:

- Motion description: The worried contractor walks in a hurry.
- Reasoning 1: The description is of a person walking in a hurry.
- Reasoning 2: How does a person typically look when they are walking hurriedly? What are the main characteristics of the body during this action?
- Reasoning 3: Walking in a hurry means an accelerated pace, with the arms swinging faster, the legs moving quickly, and the body slightly leaning forward.
- Output: A person walks in a hurry, with arms swinging faster, quickened steps, and a slight forward lean.

Now do this for the following intput:
<Input>
{input_prompt}
</Input>)TPL";

const char* kSegment = R"TPL(The action 'original_action: {original_action}' may require detailed control over specific body parts.
Please evaluate the action and think carefully about how the movement breaks down into smaller, distinct actions.
Each step should represent a single, concrete movement without including states or transitional descriptions or stationary motion or pose.
Each step should represent a single, concrete movement without including states or transitional descriptions or stationary motion or pose.

After thinking, provide a structured list of the steps involved in performing this action.

<Input>
{input_prompt}
</Input>

- Focus on describing the dynamic movement.
- Highlight the necessary coordination between body parts.
- Emphasize the importance of actions: Each step must include key movement details, avoiding redundancy or state descriptions.
- Ensure each step represents a distinct action rather than an intermediate state.
- Streamline the steps: Merge steps as much as possible, ensuring each step contains actual dynamic movements rather than empty descriptions.
- Do not include any description of facial expressions or emotions.
- Focus solely on the action and movement itself.

The number of steps should be 1, 2, 3, or 4, depending on the TEMPORAL complexity of the action. Do not use too many steps if the action is simple. 2~3 steps are usually enough.

For each step, use the words 'The man...' or 'The person's ...(body part)' to describe the action.
Ensure the explanation follows this structure:
step1: The ...
step2: The ...
...


Pay attention to ensure the format is strictly adhered to, as I will break it down according to this structure:
<code>
    # Clean the input sequence_explanation
    sequence_explanation = sequence_explanation.strip()

    # Use a regular expression to match all steps and their corresponding descriptions
    # Pattern explanation:
    #  - (?m): Multiline mode, enabling ^ and $ to match the start and end of each line
    #  - step\d+: Matches step labels, such as step1:
    #  - \s*: Matches any whitespace characters following the label
    #  - (.*?)(?=(\nstep\d+:)|$): Non-greedily matches the description content until the next step label or the end of the string
    pattern = r'(?m)^step\d+:\s*(.*?)(?=(\nstep\d+:)|$)'
    matches = re.findall(pattern, sequence_explanation, re.DOTALL)

    result = []
    for match in matches:
        step_description = match[0].strip()
        if step_description:
            step_json = {
                "prompt": step_description,
                "original prompt": action
            }
            result.append(step_json)

    return result
</code>)TPL";

const char* kBaseMotion = R"TPL(You are tasked with analyzing the following action description and extracting the base (global) motion component.

<Input>
{input_prompt}
</Input>

**Definition of Base Motion:**
- The Base Motion refers to the primary, overall movement of the entire body.
**Requirements of Base Motion:**
- It encompasses the general action without considering specific movements of individual body parts.
- The Base Motion should include head movements and global trajectories but exclude specific movements of the limbs (arms, legs).
- The Base Motion should be simple and clear; clear is important. avoiding use abstract or complex words.
- Do not include any reasoning, explanations, or additional commentary. Use precise and unambiguous language.



- Focus solely on the primary, overall movement, including head movements and general trajectories.
- Exclude any specific movements of the limbs (arms, legs).
- The base motion description should be concise and clear, ideally in one sentence.
- Use precise and unambiguous language.
- Do not include any reasoning, explanations, or additional commentary.)TPL";

const char* kLocalEdits = R"TPL(You are tasked with analyzing the differences between the action description and the base motion to extract local body part movements that need to be applied as edits.

**Definition of Local Edits:**
- Local edits refer to specific movements of individual body parts (arms, legs) that occur simultaneously with the base motion.
- These are detailed actions that modify the base motion.

<Input>
{input_prompt}
</Input>

- Identify all specific movements of the following body parts:
  - "left arm"
  - "right arm"
  - "left leg"
  - "right leg"
- For each body part, describe its movement concisely and specifically in the format:
  "A person's [body part] [action]". OR "A person [action]".
- For body parts without specific movements, the description should be "none".
- Use clear and unambiguous language.
- Do not include any reasoning, explanations, or additional commentary.
- Include all specified body parts in the output.
- Output only the JSON-formatted local edits.

Provide the local edits in the following JSON format, enclosed in <LOCAL_EDITS_JSON> tags:


<LOCAL_EDITS_JSON>
[
  {
    "body part": "left arm",
    "description": "[specific movement or 'none']"
  },
  {
    "body part": "right arm",
    "description": "[specific movement or 'none']"
  },
  {
    "body part": "left leg",
    "description": "[specific movement or 'none']"
  },
  {
    "body part": "right leg",
    "description": "[specific movement or 'none']"
  }
]
</LOCAL_EDITS_JSON>)TPL";

const char* kTrajectory = R"TPL(**Task:** Draw a continuous trajectory to represent a specified curve/line/shape(trajectory) of a person, according to the given input.

<Input>
{input_prompt}
</Input>

**YOUR OUTPUT SHOULD CONTAIN:**

1. **Closed or Open Trajectory Decision:** Decide if the trajectory is closed or open based on the description. For example, if it's a geometric figure or involves "walking around," it's likely closed. If it's a path like the letter 'S', 'L', etc., it's open. So, avoid using a closed trajectory for an open path like S, a common error is to make it like shape 8.

2. **Extract the Trajectory Using Fixed Format Breakdown: (ONLY DO WHEN Trajectoy is complex or vague. If it's simple, you can skip this step)** Break down the action description into simple, precise steps. Use a fixed format to describe the movement (e.g., "Walk forward for 5 meters, then turn 90 degrees right"). This helps in extracting the trajectory.

2.1 Avoid overcomplicating the movement.Keep it accurate and straightforward.

3. **Trajectory Analysis:** Analyze the described trajectory before writing the program. Consider overlapping parts where necessary (it's not normal curve, it's trajectory. A man's trajectory can overlap). The parameter `t` may represent time in some cases.

**Note:**: Your understanding of clock directions might be different from mine, so here's a quick reference:
12 o'clock: Straight ahead
3 o'clock: Directly to your right
6 o'clock: Directly behind you
9 o'clock: Directly to your left
1-2 o'clock: Slightly to the right front
10-11 o'clock: Slightly to the left front
4-5 o'clock: Slightly to the right back
7-8 o'clock: Slightly to the left back

**Note:**: Whether it's to the right, left, or any clock direction, it's always referenced from the perspective of the person walking this trajectory, not from the image's perspective.

**Note:** Clock directions are always referenced from the perspective of the person performing the trajectory.
Ensure that both x and y coordinates change uniformly over time (`t`). This means the trajectory should reflect a consistent speed of movement.
To ensure no "instant jumps" in the generated trajectory, specify that the trajectory function must have smooth transitions between segments. Emphasize continuity, meaning each segment's start must align with the previous segment's end, avoiding abrupt shifts. Additionally, ensure uniform speed across the entire range of `t`, with x and y coordinates changing evenly over time.

Emphasize once again: To ensure a smooth transition, you need to adjust the formulas for each segment so that they start from the endpoint coordinates of the previous segment, rather than independently redefining ( x ) and ( y ). If there are multiple segments, the starting and ending coordinates for each segment should be clearly marked in the comments as **start_x, start_y, end_x, end_y**.

4. **Mathematical Functions:** Present the final program strictly in the form provided below, ensuring it is correct and READY TO USE. Allowed operators are + - * / ^ together with the functions sin, cos, abs, sqrt and the constant pi; the only variable is t.

**Program Format:**
```
x = <expression in t>;
y = <expression in t>;
t in [<start>, <end>];
```
For a trajectory made of several pieces, write one segment block per piece instead:
```
segment { x = ...; y = ...; t in [a, b]; }
segment { x = ...; y = ...; t in [b, c]; }
```
Now the input is: "I want to draw a Description = '{input_prompt}'. Give me the trajectory program.")TPL";

const char* kReviewDecompose = R"TPL(Your task is to generate different body parts motion according to a Motion Description. The body parts are right arm, left arm, right leg and left leg.

You only need to output motions of different body parts without any explanation. If some body parts are not mentioned in the Motion Description, you need to deduce those body parts by the Motion Description. Ensure that the motion described is rational and appropriate for the specified body part, aligning with the original motion description. In the final motion description, the body parts must be the subject of the sentence.

### The input format is:
    Motion Description: [Insert text here]

### The output format is:
    Right arm: [the final right arm motion description including right arm as the subject.]

    Left arm: [the final left arm motion description including left arm as the subject.]

    Right leg: [the final right leg motion description including right leg as the subject.]

    Left leg: [the final left leg motion description including left leg as the subject.]

<Input>
{input_prompt}
</Input>)TPL";

const char* kReviewCompare = R"TPL(You have two groups of motion descriptions stored in dictionaries. Each dictionary contains the following keys: 'motion', 'Right arm', 'Left arm', 'Right leg', and 'Left leg'. The 'motion' key describes a person's overall movement, while the other keys specify the movement of each body part in that motion.

### Your task:
    Compare the 'motion' in two motion descriptions: 'motion description1' (the standard motion) and 'motion description2' (the observed motion).

    Determine if the 'motion' in 'motion description2' approximately matches the 'motion' in 'motion description1'.

    if there is a mismatch in a specific body part, you should generate what this body part should do so that it can match 'motion description1'.

### Guidelines:
    Only use 'motion' to do comparision.

    ##If there is a mismatch:
       **For left arm mismatches:**
        use the 'Left arm' in 'motion description1' to help you understand the left arm motion (do not directly use it to generate your answer) and then generate an left arm motion instruction.

        **For right arm mismatches:**
        use the 'Right arm' in 'motion description1' to help you understand the right arm motion (do not directly use it to generate your answer) and then generate an upper body motion instruction.

        **For lower body mismatches:**
        use the 'Right leg' and 'Left leg' motions in 'motion description1' to help you understand the upper body motion (do not directly use it to generate your answer) and then generate a lower body motion instruction. The lower bdoy motion must be cohesive and naturely.

    The body part motion is just for reference and help you better understand. Don't directly use the body part motion to generate output. Please start you answer from 'motion' in the motion description1. Remember motion description1 is the standard one!

    If the 'motion' of two motion description are approximately same, describing a similar motion, both upper body and lower body output None. You don't need to pay attention to the detail of two motion. We only need two motions are approximately same.

    **Approximately same:**
    if two specific and corresponding body part do a same action (raise, jump, ...), they are approximately same. You do not need to pay attention to the height of arm raised and how far a peson jump. This is the detail of one action. You do not need to pay attention to the detail of action.

    **For example:**
    the first motion that the man is walking clockwise in a circle while holding something up to his ear with his left arm. The second motion that a man with his left arm raised walk clockwise. The person in two motions both walk clockwise and raise their left arm. So these two motions are approximately same.

### Output Requirements:
    For mismatched motions, output only the motion instruction for the person's left arm or right or lower body without explanation. You must use 'a person' as the subject of your output motion for all body parts!!!

    For matched motions, simply output "None" for the respective body part.

### Input Format:
    Motion Description1: [Insert text here]

    Motion Description2: [Insert text here]


### Output Format:
    Left arm:   [Insert motion or "None"]

    Right arm:  [Insert motion or "None"]

    Lower body: [Insert motion or "None"]

<Input>
{input_prompt}
</Input>)TPL";

const char* kCaption = R"TPL(Describe the motion of the person rendered as a stick figure in the video.

<Input>
{input_prompt}
</Input>)TPL";

const char* kDuration = R"TPL(Estimate how many seconds the following motion takes for an average person to perform. Reply with a single line in the exact format:
Duration: <seconds>

<Input>
{input_prompt}
</Input>)TPL";

const char* kTrajExtract = R"TPL(Decide whether the following motion description requires a specific ground trajectory (a path shape such as a circle, a straight line, a zigzag, or a letter shape). Reply with a single line in the exact format:
Trajectory: <short trajectory description or None>

<Input>
{input_prompt}
</Input>)TPL";

const std::map<std::string, PromptTemplate>& registry() {
    static const std::map<std::string, PromptTemplate> r = {
        {"recaption", {"recaption", kRecaption}},
        {"segment", {"segment", kSegment}},
        {"base_motion", {"base_motion", kBaseMotion}},
        {"local_edits", {"local_edits", kLocalEdits}},
        {"trajectory", {"trajectory", kTrajectory}},
        {"review_decompose", {"review_decompose", kReviewDecompose}},
        {"review_compare", {"review_compare", kReviewCompare}},
        {"caption", {"caption", kCaption}},
        {"duration", {"duration", kDuration}},
        {"traj_extract", {"traj_extract", kTrajExtract}},
    };
    return r;
}

}  // namespace

const PromptTemplate& get_template(const std::string& id) {
    auto it = registry().find(id);
    if (it == registry().end()) throw Error("unknown template: " + id);
    return it->second;
}

std::vector<std::string> template_ids() {
    std::vector<std::string> ids;
    for (const auto& [k, v] : registry()) ids.push_back(k);
    return ids;
}

}  // namespace coma::agents
