from pipeline.commands import single_stage

Command = single_stage('write_evac', 'evac', 'Detect post-event evacuation per user (evac.csv)')
